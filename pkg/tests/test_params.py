import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedvid.errors import CheckpointError, NonFiniteError, ShapeMismatchError
from fedvid.params import (BACKBONE, HEAD, CheckpointMeta, WeightSet, axpy, check_compatible,
                           l2_distance, load_checkpoint, save_checkpoint, scale, sub,
                           weighted_sum, zeros_like)


def ws(**arrays):
    return WeightSet({n: (HEAD if n.startswith("h") else BACKBONE, np.asarray(a, dtype=float))
                      for n, a in arrays.items()})


class TestWeightSet:
    def test_names_are_lexicographic(self):
        w = WeightSet({"z": (BACKBONE, [1.0]), "a": (HEAD, [2.0]), "m": (BACKBONE, [3.0])})
        assert w.names == ["a", "m", "z"]

    def test_arrays_are_read_only_copies(self):
        src = np.array([1.0, 2.0])
        w = ws(b1=src)
        src[0] = 99.0
        assert w["b1"][0] == 1.0
        with pytest.raises(ValueError):
            w["b1"][0] = 5.0

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            ws(b1=[1.0, np.nan])

    def test_rejects_unknown_role(self):
        with pytest.raises(ValueError):
            WeightSet({"x": ("tail", [1.0])})

    def test_filter_role(self):
        w = ws(b1=[1.0], h1=[2.0])
        assert w.filter_role(BACKBONE).names == ["b1"]
        assert len(ws(h1=[1.0]).filter_role(BACKBONE)) == 0
        assert w.filter_role((BACKBONE, HEAD)) == w

    def test_num_params(self):
        w = ws(b1=np.zeros((3, 4)), h1=np.zeros(5))
        assert w.num_params() == 17
        assert w.num_params(BACKBONE) == 12

    def test_merge_rejects_duplicates(self):
        with pytest.raises(ValueError):
            ws(b1=[1.0]).merge(ws(b1=[2.0]))


class TestAlgebra:
    def test_axpy_examples(self):
        y = ws(b1=[1.0, -2.0], h1=[[3.0]])
        assert axpy(0.0, y, y) == y
        assert axpy(1.0, y, y) == ws(b1=[2.0, -4.0], h1=[[6.0]])
        assert axpy(-1.0, y, y) == zeros_like(y)

    def test_incompatible_names_first_mismatch(self):
        with pytest.raises(ShapeMismatchError) as exc:
            check_compatible(ws(a=[1.0], b=[1.0, 2.0]), ws(a=[1.0], b=[1.0]))
        assert exc.value.name == "b"
        assert "b" in str(exc.value)

    def test_incompatible_roles(self):
        x = WeightSet({"p": (BACKBONE, [1.0])})
        y = WeightSet({"p": (HEAD, [1.0])})
        with pytest.raises(ShapeMismatchError):
            sub(x, y)

    def test_l2_examples(self):
        x = ws(b1=np.zeros((3, 4)))
        assert l2_distance(x, x) == 0.0
        one = np.zeros((3, 4))
        one[0, 0] = 1.0
        assert l2_distance(x, ws(b1=one)) == 1.0
        # two params, each differing by 1 in two slots -> sqrt(4)
        a = ws(b1=[0.0, 0.0, 0.0], b2=[0.0, 0.0])
        b = ws(b1=[1.0, 0.0, 1.0], b2=[1.0, -1.0])
        assert l2_distance(a, b) == 2.0

    def test_l2_by_role(self):
        a = ws(b1=[0.0], h1=[0.0])
        b = ws(b1=[3.0], h1=[4.0])
        assert l2_distance(a, b) == 5.0
        assert l2_distance(a, b, HEAD) == 4.0

    def test_weighted_sum_matches_elementwise(self, gen):
        sets = [ws(b1=gen.standard_normal((2, 3)), h1=gen.standard_normal(4)) for _ in range(3)]
        c = [0.2, 0.5, 0.3]
        out = weighted_sum(c, sets)
        for n in out:
            expect = c[0] * sets[0][n] + c[1] * sets[1][n] + c[2] * sets[2][n]
            np.testing.assert_array_equal(out[n], expect)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(-10, 10))
    def test_scale_sub_properties(self, vals, a):
        x = ws(b1=vals)
        np.testing.assert_array_equal(scale(a, x)["b1"], a * np.asarray(vals))
        assert l2_distance(sub(x, x), zeros_like(x)) == 0.0


class TestCheckpoint:
    def meta(self):
        return CheckpointMeta(3, "0", "abc", 1)

    def test_round_trip_bitwise(self, tmp_path, gen):
        w = ws(b1=gen.standard_normal((4, 5)) * 1e-7, h1=gen.standard_normal(3) * 1e9)
        p = save_checkpoint(w, self.meta(), tmp_path / "w.ckpt.json")
        back, meta = load_checkpoint(p)
        assert meta == self.meta()
        for n in w:
            assert back[n].tobytes() == w[n].tobytes()
            assert back.role(n) == w.role(n)

    def test_partial_checkpoint_has_no_head(self, tmp_path):
        w = ws(b1=[1.0, 2.0], h1=[3.0])
        p = save_checkpoint(w.filter_role(BACKBONE), self.meta(), tmp_path / "p.ckpt.json")
        doc = json.loads(p.read_text())
        assert all(rec["role"] == BACKBONE for rec in doc["params"].values())
        assert "h1" not in doc["params"]

    def test_truncated_data_is_malformed(self, tmp_path):
        p = save_checkpoint(ws(b1=[1.0, 2.0, 3.0]), self.meta(), tmp_path / "t.ckpt.json")
        doc = json.loads(p.read_text())
        doc["params"]["b1"]["data"] = doc["params"]["b1"]["data"][:2]
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="malformed checkpoint"):
            load_checkpoint(p)

    def test_truncated_file_is_malformed(self, tmp_path):
        p = save_checkpoint(ws(b1=[1.0, 2.0, 3.0]), self.meta(), tmp_path / "t.ckpt.json")
        p.write_text(p.read_text()[:-10])
        with pytest.raises(CheckpointError, match="malformed checkpoint"):
            load_checkpoint(p)

    def test_version_mismatch(self, tmp_path):
        p = save_checkpoint(ws(b1=[1.0]), self.meta(), tmp_path / "v.ckpt.json")
        doc = json.loads(p.read_text())
        doc["format_version"] = 99
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="version mismatch"):
            load_checkpoint(p)

    def test_non_finite_rejected(self, tmp_path):
        p = tmp_path / "n.ckpt.json"
        p.write_text('{"format_version": 1, "meta": {"round": 0, "master_seed": "0", '
                     '"config_sha256": "", "created_unix_ms": 0}, '
                     '"params": {"b1": {"role": "backbone", "shape": [1], "data": [Infinity]}}}')
        with pytest.raises(CheckpointError, match="non-finite"):
            load_checkpoint(p)

    def test_shortest_repr_serialization(self, tmp_path):
        p = save_checkpoint(ws(b1=[0.1, 1 / 3]), self.meta(), tmp_path / "r.ckpt.json")
        data = json.loads(p.read_text())["params"]["b1"]["data"]
        assert data == [0.1, 1 / 3]
        assert "0.1," in p.read_text() and math.isfinite(data[1])
