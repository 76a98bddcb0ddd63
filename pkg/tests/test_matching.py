import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from widefov.imaging import partition
from widefov.matching import (
    DEFAULT_TAU,
    DegeneratePatchWarning,
    dump_matches,
    embed,
    embed_batch,
    match_patches,
    similarity,
    similarity_matrix,
)

vecs = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=12)


def test_default_threshold():
    assert DEFAULT_TAU == 0.7


def test_embedding_is_deterministic_and_self_similar(backbone, rng):
    p = rng.random((32, 32, 3), dtype=np.float32)
    a, b = embed(p, backbone), embed(p.copy(), backbone)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))
    assert similarity(a, b) == pytest.approx(1.0, abs=1e-6)


def test_small_patches_are_embedded_too(backbone, rng):
    assert np.all(np.isfinite(embed(rng.random((8, 8, 3), dtype=np.float32), backbone)))
    with pytest.raises(ValueError):
        embed(np.zeros((0, 4, 3), np.float32), backbone)


def test_similarity_matches_vector_oracle(backbone, rng):
    a = embed(rng.random((32, 32, 3), dtype=np.float32), backbone)
    b = embed(rng.random((32, 32, 3), dtype=np.float32), backbone)
    dot = sum(x * y for x, y in zip(a, b))
    oracle = dot / (np.sqrt(sum(x * x for x in a)) * np.sqrt(sum(y * y for y in b)))
    assert similarity(a, b) == pytest.approx(oracle, abs=1e-12)


def test_similarity_trivial_cases():
    v = np.array([0.3, -1.0, 2.0])
    assert similarity(v, v) == pytest.approx(1.0)
    assert similarity(v, -v) == pytest.approx(-1.0)
    assert similarity([1, 0], [0, 1]) == 0.0
    with pytest.warns(DegeneratePatchWarning):
        assert similarity([0, 0], [1, 2]) == 0.0


@given(vecs, st.floats(0.01, 100))
def test_similarity_symmetric_and_scale_invariant(v, k):
    a = np.array(v)
    b = np.roll(a, 1) + 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneratePatchWarning)
        s = similarity(a, b)
        assert s == pytest.approx(similarity(b, a), abs=1e-12)
        assert s == pytest.approx(similarity(k * a, b), abs=1e-9)
        assert -1.0 <= s <= 1.0


def test_identical_lists_match_themselves(backbone, rng):
    img = rng.random((256, 256, 3), dtype=np.float32)
    patches = partition(img)
    matches = match_patches(patches, patches, backbone=backbone)
    assert len(matches) == 64
    for m in matches:
        assert m.wide_pos == m.narrow_pos
        assert m.score == pytest.approx(1.0, abs=1e-6)
        assert m.above_threshold


def test_matches_equal_exhaustive_oracle(backbone, rng):
    wide = partition(rng.random((256, 256, 3), dtype=np.float32))
    narrow = partition(rng.random((256, 256, 3), dtype=np.float32) ** 2)
    matches = match_patches(wide, narrow, tau=0.99, backbone=backbone)
    we, ne = embed_batch(wide, backbone), embed_batch(narrow, backbone)
    for i, m in enumerate(matches):
        row = [similarity(we[i], ne[j]) for j in range(64)]
        j = int(np.argmax(row))
        assert m.narrow_pos == narrow[j].grid_pos
        assert m.score == pytest.approx(max(row), abs=1e-9)
        assert m.above_threshold == (m.score >= 0.99)


def test_similarity_matrix_handles_zero_rows():
    s = similarity_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 1.0]]))
    assert s[0, 0] == 0.0 and s[1, 0] == pytest.approx(2 ** -0.5)


def test_match_input_validation(backbone, rng):
    patches = partition(rng.random((64, 64, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        match_patches(patches[:10], patches, backbone=backbone)
    with pytest.raises(ValueError):
        match_patches(patches, patches, tau=1.5, backbone=backbone)


def test_dump_matches_writes_every_pair(tmp_path, backbone, rng):
    patches = partition(rng.random((64, 64, 3), dtype=np.float32))
    matches = match_patches(patches, patches, backbone=backbone)
    path = dump_matches(tmp_path / "m.json", matches, meta={"tau": 0.7})
    data = json.loads(path.read_text())
    assert len(data["matches"]) == 64 and data["meta"]["tau"] == 0.7
    assert data["matches"][0]["wide_pos"] == [0, 0]
