"""Tests for obslab and obslab_cli"""
