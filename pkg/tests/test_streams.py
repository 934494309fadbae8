"""
Unit tests for the counter-based random streams.
"""

import pytest

from fbm_polymer.errors import DomainError
from fbm_polymer.streams import StreamKey, label_key, site_key, zigzag


class TestLabels:
    """Test the mapping from labels to stream keys."""

    def test_negative_label_rejected(self):
        """Test that a negative integer label raises DomainError."""
        with pytest.raises(DomainError):
            label_key(-1)
        with pytest.raises(DomainError):
            StreamKey().child("site", -1)

    def test_string_labels_are_stable(self):
        """Test that a string label always maps to the same key."""
        assert label_key("env") == label_key("env")
        assert label_key("env") != label_key("gap")

    def test_zigzag_is_injective(self):
        """Test distinct keys for -3..3."""
        keys = [zigzag(value) for value in range(-3, 4)]
        assert sorted(keys) == list(range(7))

    def test_mirrored_sites_differ(self):
        """Test that x and -x address different streams."""
        assert site_key((1,)) != site_key((-1,))
        assert site_key((1, -2)) != site_key((-1, 2))
        root = StreamKey(seed=5)
        assert root.child("site", *site_key((1,))) != root.child("site", *site_key((-1,)))


class TestStreamKey:
    """Test reproducibility of the derived generators."""

    def test_same_key_same_numbers(self):
        """Test that equal keys draw equal numbers."""
        first = StreamKey(seed=3).child("env", 2).generator().standard_normal(4)
        second = StreamKey(seed=3).child("env", 2).generator().standard_normal(4)
        assert list(first) == list(second)

    def test_replicas_are_distinct(self):
        """Test that replica streams draw different numbers."""
        keys = StreamKey(seed=3).replicas(3)
        draws = {float(key.generator().standard_normal()) for key in keys}
        assert len(draws) == 3
