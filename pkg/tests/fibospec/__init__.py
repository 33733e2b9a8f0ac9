"""Tests for fibospec package modules."""
