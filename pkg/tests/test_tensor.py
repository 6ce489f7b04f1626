import numpy as np
import pytest

from littlebit import tensor
from littlebit.errors import FormatError


class TestTruncatedSvd:
    def test_identity(self):
        res = tensor.truncated_svd(np.eye(3), 3)
        assert np.allclose(res.sigma, [1.0, 1.0, 1.0])

    def test_diagonal(self):
        a = np.diag([3.0, 2.0, 1.0])
        res = tensor.truncated_svd(a, 2)
        assert np.allclose(res.sigma, [3.0, 2.0])
        recon = (res.u * res.sigma) @ res.v.T
        assert abs(np.linalg.norm(a - recon) - 1.0) < 1e-12

    def test_matches_gram_eigensolver(self, rng):
        # independent oracle: eigenvalues of the Gram matrix
        a = rng.standard_normal((16, 12))
        res = tensor.truncated_svd(a, 5)
        gram_eigs = np.linalg.eigvalsh(a.T @ a)[::-1][:5]
        assert np.allclose(res.sigma, np.sqrt(gram_eigs), rtol=1e-8)

    def test_orthonormal_columns_and_order(self, rng):
        a = rng.standard_normal((20, 9))
        res = tensor.truncated_svd(a, 6)
        assert np.allclose(res.u.T @ res.u, np.eye(6), atol=1e-8)
        assert np.allclose(res.v.T @ res.v, np.eye(6), atol=1e-8)
        assert np.all(res.sigma >= 0)
        assert np.all(np.diff(res.sigma) <= 1e-12)

    def test_sign_convention_deterministic(self, rng):
        a = rng.standard_normal((10, 10))
        r1 = tensor.truncated_svd(a, 4)
        r2 = tensor.truncated_svd(a.copy(), 4)
        assert np.array_equal(r1.u, r2.u) and np.array_equal(r1.v, r2.v)
        for i in range(4):
            j = np.argmax(np.abs(r1.u[:, i]))
            assert r1.u[j, i] > 0

    def test_rank_out_of_range(self, rng):
        a = rng.standard_normal((5, 4))
        for k in (0, 5):
            with pytest.raises(ValueError):
                tensor.truncated_svd(a, k)

    def test_nonfinite_rejected(self):
        a = np.ones((3, 3))
        a[1, 1] = np.nan
        with pytest.raises(ValueError):
            tensor.truncated_svd(a, 1)

    def test_eckart_young_optimality(self, rng):
        # rank-k SVD beats 100 random rank-k matrices
        for m, n, k in [(12, 9, 2), (30, 40, 5), (64, 17, 3)]:
            a = rng.standard_normal((m, n))
            res = tensor.truncated_svd(a, k)
            best = np.linalg.norm(a - (res.u * res.sigma) @ res.v.T)
            for _ in range(100):
                p = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
                assert best <= np.linalg.norm(a - p) + 1e-8


class TestRank1Nonneg:
    def test_exact_outer_product(self):
        a = np.outer([1.0, 2.0], [3.0, 4.0])
        res = tensor.rank1_nonneg(a)
        assert np.allclose(res.right, np.array([3.0, 4.0]) / 5.0)
        assert np.allclose(np.outer(res.left, res.right), a, atol=1e-12)

    def test_constant_matrix(self):
        res = tensor.rank1_nonneg(np.ones((4, 4)))
        assert np.allclose(res.left, [2.0, 2.0, 2.0, 2.0])
        assert np.allclose(res.right, [0.5, 0.5, 0.5, 0.5])

    def test_matches_full_svd_oracle(self, rng):
        a = np.abs(rng.standard_normal((8, 6)))
        res = tensor.rank1_nonneg(a)
        u, s, vt = np.linalg.svd(a)
        assert abs(np.linalg.norm(res.left) - s[0]) < 1e-8 * s[0]
        approx_err = np.linalg.norm(a - np.outer(res.left, res.right))
        best_err = np.linalg.norm(a - s[0] * np.outer(u[:, 0], vt[0]))
        assert approx_err <= best_err + 1e-8

    def test_agrees_with_truncated_svd(self, rng):
        a = np.abs(rng.standard_normal((9, 7))) + 0.05
        res = tensor.rank1_nonneg(a)
        svd1 = tensor.truncated_svd(a, 1)
        # same subspace up to the normalization convention
        assert np.allclose(res.left, svd1.sigma[0] * np.abs(svd1.u[:, 0]),
                           rtol=1e-8, atol=1e-10)
        assert np.allclose(res.right, np.abs(svd1.v[:, 0]),
                           rtol=1e-8, atol=1e-10)

    def test_nonnegative_outputs(self, rng):
        a = np.abs(rng.standard_normal((12, 5)))
        res = tensor.rank1_nonneg(a)
        assert np.all(res.left >= 0) and np.all(res.right >= 0)

    def test_rejects_zero_and_negative(self):
        with pytest.raises(ValueError):
            tensor.rank1_nonneg(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            tensor.rank1_nonneg(np.array([[1.0, -0.1], [0.2, 0.3]]))


class TestRng:
    def test_same_seed_identical(self):
        a = tensor.gaussian_matrix(tensor.seeded_rng(11), 6, 7, 0.5)
        b = tensor.gaussian_matrix(tensor.seeded_rng(11), 6, 7, 0.5)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = tensor.gaussian_matrix(tensor.seeded_rng(1), 6, 7)
        b = tensor.gaussian_matrix(tensor.seeded_rng(2), 6, 7)
        assert not np.array_equal(a, b)

    def test_sample_statistics(self):
        m = tensor.gaussian_matrix(tensor.seeded_rng(3), 200, 200, std=0.02)
        assert 0.019 <= m.std() <= 0.021
        assert abs(m.mean()) < 0.05 * 0.02

    def test_bad_std(self):
        with pytest.raises(ValueError):
            tensor.gaussian_matrix(tensor.seeded_rng(0), 2, 2, std=0.0)


class TestLbm1:
    def test_roundtrip_identical_bytes(self, rng, tmp_path):
        m = rng.standard_normal((5, 7))
        p1, p2 = tmp_path / "a.lbm", tmp_path / "b.lbm"
        tensor.save_matrix(m, p1)
        loaded = tensor.load_matrix(p1)
        tensor.save_matrix(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        # float32 on disk, widened in memory
        assert loaded.dtype == np.float64
        assert np.array_equal(loaded, m.astype(np.float32).astype(np.float64))

    def test_roundtrip_idempotent_many(self, rng, tmp_path):
        for i in range(10):
            m = rng.standard_normal((rng.integers(1, 9), rng.integers(1, 9)))
            p = tmp_path / f"m{i}.lbm"
            tensor.save_matrix(m, p)
            first = p.read_bytes()
            tensor.save_matrix(tensor.load_matrix(p), p)
            assert p.read_bytes() == first

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.lbm"
        p.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            tensor.load_matrix(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.lbm"
        p.write_bytes(b"")
        with pytest.raises(FormatError, match="truncated"):
            tensor.load_matrix(p)

    def test_truncated_payload(self, rng, tmp_path):
        p = tmp_path / "trunc.lbm"
        tensor.save_matrix(rng.standard_normal((4, 4)), p)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(FormatError):
            tensor.load_matrix(p)

    def test_nonfinite_payload(self, rng, tmp_path):
        p = tmp_path / "inf.lbm"
        tensor.save_matrix(rng.standard_normal((2, 2)), p)
        raw = bytearray(p.read_bytes())
        raw[12:16] = np.array([np.inf], dtype="<f4").tobytes()
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="non-finite"):
            tensor.load_matrix(p)

    def test_save_rejects_nonfinite(self, tmp_path):
        m = np.full((2, 2), np.nan)
        with pytest.raises(ValueError):
            tensor.save_matrix(m, tmp_path / "x.lbm")
