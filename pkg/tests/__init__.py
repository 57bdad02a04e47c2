"""Tests for the SCDMA toolkit"""
