"""Tests for Stagger Mesh."""
