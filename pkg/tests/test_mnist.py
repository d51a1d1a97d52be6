"""IDX/PGM codecs, image contamination and the reconstruction study."""

import gzip
import struct

import numpy as np
import pytest

from phipca.aggregate import fit_phi_pca, make_partition
from phipca.exceptions import ConfigError, ParameterError, ParseError
from phipca.mnist import (
    IdxImageSet,
    ReconConfig,
    clamp_pixels,
    contaminate_images,
    emit_pgm,
    parse_idx,
    parse_idx_images,
    parse_idx_labels,
    parse_pgm,
    reconstruct,
    run_recon_study,
    serialize_idx_images,
    serialize_idx_labels,
    setting_grid,
    synthetic_digits,
    synthetic_split,
)
from phipca.phi import HM

FIXTURE = bytes.fromhex("00000803" "00000002" "00000002" "00000002") + bytes(range(1, 9))


class TestIdx:
    def test_hand_fixture(self):
        assert len(FIXTURE) == 24
        images = parse_idx_images(FIXTURE)
        assert (images.count, images.rows, images.cols) == (2, 2, 2)
        np.testing.assert_array_equal(images.pixels, [[1, 2, 3, 4], [5, 6, 7, 8]])
        np.testing.assert_array_equal(images.images()[1], [5.0, 6.0, 7.0, 8.0])

    def test_truncation(self):
        with pytest.raises(ParseError, match="offset 23"):
            parse_idx_images(FIXTURE[:-1])

    def test_trailing_bytes(self):
        with pytest.raises(ParseError, match="offset 24"):
            parse_idx_images(FIXTURE + b"\x00")

    def test_bad_magic(self):
        with pytest.raises(ParseError, match="offset 0"):
            parse_idx_images(b"\x00\x00\x08\x01" + FIXTURE[4:])

    def test_round_trip(self):
        assert serialize_idx_images(parse_idx_images(FIXTURE)) == FIXTURE
        labels = serialize_idx_labels([3, 7])
        assert serialize_idx_labels(parse_idx_labels(labels)) == labels

    def test_random_round_trip(self):
        pix = np.random.default_rng(0).integers(0, 256, (5, 12), dtype=np.uint8)
        data = serialize_idx_images(IdxImageSet(5, 3, 4, pix))
        assert serialize_idx_images(parse_idx_images(data)) == data

    def test_files_and_labels(self, tmp_path):
        (tmp_path / "img.idx.gz").write_bytes(gzip.compress(FIXTURE))
        (tmp_path / "lab.idx").write_bytes(serialize_idx_labels([1, 2]))
        images = parse_idx(tmp_path / "img.idx.gz", tmp_path / "lab.idx")
        np.testing.assert_array_equal(images.select(2), [[5.0, 6.0, 7.0, 8.0]])

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "img.idx").write_bytes(FIXTURE)
        (tmp_path / "lab.idx").write_bytes(serialize_idx_labels([1, 2, 3]))
        with pytest.raises(ParseError, match="offset 4"):
            parse_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


class TestPgm:
    def test_round_trip_clamps(self):
        img = np.random.default_rng(1).normal(128, 120, (28, 28))
        np.testing.assert_array_equal(parse_pgm(emit_pgm(img)), clamp_pixels(img))

    def test_header(self):
        data = emit_pgm(np.zeros(6), rows=2, cols=3)
        assert data.startswith(b"P5\n3 2\n255\n")
        assert len(data) == len(b"P5\n3 2\n255\n") + 6

    def test_comment(self):
        data = b"P5\n# made by hand\n2 1\n255\n\x05\xff"
        np.testing.assert_array_equal(parse_pgm(data), [[5, 255]])

    def test_errors(self):
        with pytest.raises(ParseError):
            parse_pgm(b"P2\n2 1\n255\n")
        with pytest.raises(ParseError):
            parse_pgm(b"P5\n2 2\n255\n\x00")
        with pytest.raises(ParameterError):
            emit_pgm(np.zeros(6))

    def test_clamp(self):
        np.testing.assert_array_equal(clamp_pixels([-3.0, 0.4, 0.6, 254.5, 300.0]), [0, 0, 1, 254, 255])


class TestContamination:
    X = np.random.default_rng(0).uniform(0, 255, (1000, 16))

    def test_zero_fraction(self):
        out, mask = contaminate_images(self.X, 0.0, 300.0, seed=0)
        np.testing.assert_array_equal(out, self.X)
        assert not mask.any()

    def test_zero_scale(self):
        out, mask = contaminate_images(self.X, 1.0, 0.0, seed=0)
        np.testing.assert_array_equal(out, self.X)
        assert mask.all()

    def test_exact_count(self):
        out, mask = contaminate_images(self.X, 0.1, 300.0, seed=1)
        assert mask.sum() == 100
        changed = np.any(out != self.X, axis=1)
        np.testing.assert_array_equal(changed, mask)

    def test_unclamped(self):
        out, _ = contaminate_images(self.X, 0.3, 300.0, seed=2)
        assert out.min() < 0 or out.max() > 255

    def test_reproducible(self):
        a, _ = contaminate_images(self.X, 0.2, 50.0, seed=3)
        b, _ = contaminate_images(self.X, 0.2, 50.0, seed=3)
        np.testing.assert_array_equal(a, b)


class TestReconstruct:
    @pytest.fixture
    def basis(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((10, 10)))
        return Q

    def test_mean_fixed(self, basis):
        mean = np.arange(10.0)
        np.testing.assert_allclose(reconstruct(basis, mean, mean, 3), mean)

    def test_in_span(self, basis):
        mean = np.ones(10)
        x0 = mean + basis[:, :3] @ np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(reconstruct(basis, mean, x0, 3), x0, atol=1e-8)

    def test_orthogonal(self, basis):
        mean = np.ones(10)
        np.testing.assert_allclose(reconstruct(basis, mean, mean + 4 * basis[:, 5], 3), mean, atol=1e-12)

    def test_idempotent(self, basis):
        mean = np.full(10, 2.0)
        x0 = np.random.default_rng(1).standard_normal(10)
        once = reconstruct(basis, mean, x0, 4)
        np.testing.assert_allclose(reconstruct(basis, mean, once, 4), once, atol=1e-8)

    def test_bad_rank(self, basis):
        with pytest.raises(ParameterError):
            reconstruct(basis, np.zeros(10), np.zeros(10), 11)


class TestSyntheticCorpus:
    def test_shape_and_range(self):
        X = synthetic_digits(3, 20, seed=0)
        assert X.shape == (20, 784)
        assert X.min() >= 0 and X.max() <= 255

    def test_reproducible_split(self):
        a = synthetic_split(1, 30, 5, seed=2)
        b = synthetic_split(1, 30, 5, seed=2)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert not np.array_equal(a[0][:5], a[1])

    def test_digits_differ(self):
        assert np.abs(synthetic_digits(1, 50, 0).mean(0) - synthetic_digits(2, 50, 0).mean(0)).max() > 50


class TestStudy:
    def test_grids(self):
        assert setting_grid("i") == [(0.0, 300.0), (0.05, 300.0), (0.1, 300.0), (0.15, 300.0), (0.2, 300.0), (0.25, 300.0), (0.3, 300.0)]
        assert [s for _, s in setting_grid("ii")] == [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0]
        with pytest.raises(ConfigError):
            setting_grid("iii")

    def test_missing_data(self, monkeypatch, tmp_path):
        monkeypatch.delenv("PHI_PCA_DATA_DIR", raising=False)
        with pytest.raises(ConfigError):
            run_recon_study(ReconConfig(data_dir=str(tmp_path)))

    def test_small_study_artifacts(self, tmp_path):
        cfg = ReconConfig(digits=(1,), grid=[(0.0, 300.0), (0.2, 300.0)], r=10, n_train=200, n_test=6,
                          emit_images=2, fallback_synthetic=True)
        study = run_recon_study(cfg, out_dir=tmp_path)
        assert study.source == "synthetic"
        assert len(study.results) == 6
        assert (tmp_path / "mse.csv").read_text().count("\n") == 1 + 6 * 6
        pgms = sorted((tmp_path / "images").glob("*.pgm"))
        assert len(pgms) == 2 + 6 * 2
        img = parse_pgm(pgms[0].read_bytes())
        assert img.shape == (28, 28)
        assert study.mean_mse(1, "HM", 0.2, 300.0) < study.mean_mse(1, "PCA", 0.2, 300.0)

    def test_partition_seed_invariance(self):
        train, test = synthetic_split(2, 400, 40, seed=5)
        mses = []
        for seed in range(4):
            model = fit_phi_pca(train, 20, HM, plan=make_partition(400, 20, seed))
            mses.append(((reconstruct(model, model.mean, test, 20) - test) ** 2).mean(axis=1))
        mses = np.array(mses)
        se = mses.std(axis=1, ddof=1).max() / np.sqrt(40)
        assert np.ptp(mses.mean(axis=1)) < 2 * se

    def test_config_round_trip(self):
        cfg = ReconConfig(digits=(2,), setting="ii", r=30)
        assert ReconConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            ReconConfig(methods=("AM",))
