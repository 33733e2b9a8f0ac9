"""Tests for fibospec package."""
