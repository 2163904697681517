import math

import numpy as np
import pytest

from wfmixer.core_ops import ConfigError
from wfmixer.data import toy_scene
from wfmixer.generator import composite
from wfmixer.masks import EVAL_INTERVALS, MaskKind
from wfmixer.metrics import MetricsReport, evaluate, interval_label, mae, psnr, ssim


class TestMae:
    def test_identical(self, rng):
        x = rng.random((3, 8, 8))
        assert mae(x, x) == 0.0

    def test_uniform_offset(self, rng):
        x = rng.random((3, 8, 8)) * 0.5
        assert mae(x, x + 0.1) == pytest.approx(0.1, abs=1e-12)

    def test_matches_scalar_loop_oracle(self, rng):
        x = rng.random((2, 4, 4))
        y = rng.random((2, 4, 4))
        expected = np.mean([abs(a - b) for a, b in zip(x.flatten(), y.flatten())])
        assert mae(x, y) == pytest.approx(expected, rel=1e-12)


class TestPsnr:
    def test_uniform_offset_is_20db(self, rng):
        x = rng.random((3, 8, 8)) * 0.5
        assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-6)

    def test_identical_capped_at_100db(self, rng):
        x = rng.random((3, 8, 8))
        assert psnr(x, x) == 100.0

    def test_exact_formula_when_mse_positive(self, rng):
        x = rng.random((3, 6, 6))
        y = rng.random((3, 6, 6))
        mse = float(((x - y) ** 2).mean())
        assert psnr(x, y) == pytest.approx(-10.0 * math.log10(mse), abs=1e-6)

    def test_monotone_decreasing_in_mse(self, rng):
        x = rng.random((3, 8, 8)) * 0.5
        assert psnr(x, x + 0.01) > psnr(x, x + 0.02) > psnr(x, x + 0.1)


class TestSsim:
    def test_identical_is_one(self, rng):
        x = rng.random((3, 16, 32))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_checkerboard_negative(self):
        tile = np.indices((32, 32)).sum(axis=0) % 2
        x = np.stack([tile, tile, tile]).astype(np.float64)
        assert ssim(x, 1.0 - x) < 0.0

    def test_uniform_pair_closed_form_luminance(self):
        c1 = 0.01**2
        mu1, mu2 = 0.3, 0.7
        x = np.full((1, 16, 16), mu1)
        y = np.full((1, 16, 16), mu2)
        expected = (2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)
        assert ssim(x, y) == pytest.approx(expected, rel=1e-9)

    def test_symmetric(self, rng):
        x = rng.random((3, 16, 24))
        y = rng.random((3, 16, 24))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-9)

    def test_matches_reference_implementation(self, rng):
        skimage = pytest.importorskip("skimage.metrics")
        x = rng.random((16, 32))
        y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
        ours = ssim(x, y)
        theirs = skimage.structural_similarity(
            x, y, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
            data_range=1.0,
        )
        assert ours == pytest.approx(theirs, abs=1e-7)

    def test_too_small_rejected(self):
        with pytest.raises(ConfigError):
            ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            ssim(np.zeros((1, 16, 16)), np.zeros((1, 16, 17)))


def identity_model(image, mask):
    return image.copy()


def gray_model(image, mask):
    return np.full_like(image, 0.5)


@pytest.fixture(scope="module")
def pairs():
    rng = np.random.default_rng(5)
    return [toy_scene(rng, 32, 64) for _ in range(3)]


class TestEvaluate:
    def test_grid_shape(self, pairs):
        report = evaluate(gray_model, pairs)
        assert len(report.cells) == 25  # 5 kinds x 5 intervals
        kinds = {row["kind"] for row in report.cells}
        assert len(kinds) == 5
        intervals = {row["interval"] for row in report.cells}
        assert intervals == {interval_label(lo, hi) for lo, hi in EVAL_INTERVALS}
        assert all(row["n"] == 3 for row in report.cells)

    def test_ground_truth_model_scores_perfectly(self, pairs):
        report = evaluate(identity_model, pairs)
        for row in report.cells:
            assert row["mae"] == 0.0
            assert row["psnr"] == 100.0
            assert row["ssim"] == pytest.approx(1.0, abs=1e-9)

    def test_deterministic_across_runs(self, pairs):
        a = evaluate(gray_model, pairs, seed=3)
        b = evaluate(gray_model, pairs, seed=3)
        assert a.cells == b.cells

    def test_invariant_to_iteration_order(self, pairs):
        a = evaluate(gray_model, pairs, seed=3)
        b = evaluate(gray_model, list(reversed(pairs)), seed=3)
        for row_a, row_b in zip(a.cells, b.cells):
            assert row_a["mae"] == pytest.approx(row_b["mae"], rel=1e-12)
            assert row_a["psnr"] == pytest.approx(row_b["psnr"], rel=1e-12)

    def test_different_seed_changes_masks(self, pairs):
        def mask_aware(image, mask):
            return composite(image, np.full_like(image, 0.5), mask)

        a = evaluate(mask_aware, pairs, seed=3)
        b = evaluate(mask_aware, pairs, seed=4)
        assert any(ra["mae"] != rb["mae"] for ra, rb in zip(a.cells, b.cells))

    def test_composite_improves_unmasked_region(self, pairs):
        raw = evaluate(gray_model, pairs, kinds=(MaskKind.RECTANGULAR,))
        comp = evaluate(gray_model, pairs, kinds=(MaskKind.RECTANGULAR,), composite=True)
        for r_raw, r_comp in zip(raw.cells, comp.cells):
            assert r_comp["mae"] < r_raw["mae"]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            evaluate(gray_model, [])


class TestMetricsReport:
    def _report(self):
        rng = np.random.default_rng(5)
        pairs = [toy_scene(rng, 32, 64) for _ in range(2)]
        return evaluate(gray_model, pairs, kinds=(MaskKind.RECTANGULAR, MaskKind.QUADRANTS),
                        intervals=EVAL_INTERVALS[:2])

    def test_json_roundtrip(self):
        report = self._report()
        clone = MetricsReport.from_json(report.to_json())
        assert clone.cells == report.cells
        assert clone.composite == report.composite

    def test_csv_columns(self):
        report = self._report()
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "kind,interval,mae,psnr,ssim,n"
        assert len(lines) == 1 + len(report.cells)
        first = lines[1].split(",")
        assert first[0] == "rectangular"
        assert first[5] == "2"

    def test_markdown_mirrors_kind_rows(self):
        report = self._report()
        md = report.to_markdown()
        assert md.count("rectangular") == 1  # kind printed once per group
        assert "| Mask | Interval | MAE | PSNR | SSIM | n |" in md

    def test_cell_lookup(self):
        report = self._report()
        row = report.cell(MaskKind.QUADRANTS, EVAL_INTERVALS[0])
        assert row["kind"] == "quadrants"
        with pytest.raises(KeyError):
            report.cell(MaskKind.IRREGULAR, EVAL_INTERVALS[0])
