import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from ann.services.exceptions import DatasetFormatError
from ann.services.vector_store import (
    Dataset,
    QuantizedSet,
    gen_clustered,
    gen_queries,
    load_bvecs,
    load_fvecs,
    load_ivecs,
    repeat_queries,
    split_holdout,
    write_fvecs,
    write_ivecs,
)


def _record(d, values, dtype="<f4"):
    return np.array([d], dtype="<i4").tobytes() + np.asarray(values, dtype=dtype).tobytes()


class VectorFileTests(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_single_record_fvecs(self):
        path = self.tmp / "one.fvecs"
        path.write_bytes(_record(2, [1.0, 2.0]))
        dataset = load_fvecs(path)
        self.assertEqual((dataset.n, dataset.d), (1, 2))
        np.testing.assert_array_equal(dataset.data, [[1.0, 2.0]])

    def test_inconsistent_dimension(self):
        path = self.tmp / "bad.fvecs"
        path.write_bytes(_record(2, [1.0, 2.0]) + _record(3, [1.0, 2.0, 3.0]))
        with self.assertRaisesRegex(DatasetFormatError, "inconsistent dimension"):
            load_fvecs(path)

    def test_inconsistent_dimension_with_aligned_size(self):
        path = self.tmp / "bad.fvecs"
        # Same byte length per record, but the second header lies.
        path.write_bytes(_record(2, [1.0, 2.0]) + np.array([5], dtype="<i4").tobytes()
                         + np.array([3.0, 4.0], dtype="<f4").tobytes())
        with self.assertRaisesRegex(DatasetFormatError, "inconsistent dimension at record 1"):
            load_fvecs(path)

    def test_truncated_file(self):
        path = self.tmp / "short.fvecs"
        path.write_bytes(_record(4, [1.0, 2.0, 3.0, 4.0]) + _record(4, [1.0, 2.0, 3.0, 4.0])[:-3])
        with self.assertRaisesRegex(DatasetFormatError, "truncated"):
            load_fvecs(path)

    def test_non_positive_dimension(self):
        path = self.tmp / "zero.fvecs"
        path.write_bytes(np.array([0], dtype="<i4").tobytes())
        with self.assertRaises(DatasetFormatError):
            load_fvecs(path)

    def test_non_finite_values_rejected(self):
        path = self.tmp / "nan.fvecs"
        path.write_bytes(_record(2, [1.0, np.nan]))
        with self.assertRaises(DatasetFormatError):
            load_fvecs(path)

    def test_empty_fvecs_is_an_error(self):
        path = self.tmp / "empty.fvecs"
        path.write_bytes(b"")
        with self.assertRaises(DatasetFormatError):
            load_fvecs(path)

    def test_ivecs_single_record_and_empty(self):
        path = self.tmp / "gt.ivecs"
        path.write_bytes(_record(3, [5, 9, 2], dtype="<i4"))
        np.testing.assert_array_equal(load_ivecs(path), [[5, 9, 2]])

        empty = self.tmp / "empty.ivecs"
        empty.write_bytes(b"")
        self.assertEqual(load_ivecs(empty).shape[0], 0)

    def test_fvecs_and_ivecs_write_read_bit_exact(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((50, 7)).astype(np.float32)
        ids = rng.integers(0, 1000, size=(20, 10)).astype(np.int32)
        write_fvecs(self.tmp / "x.fvecs", data)
        write_ivecs(self.tmp / "x.ivecs", ids)
        np.testing.assert_array_equal(load_fvecs(self.tmp / "x.fvecs").data, data)
        np.testing.assert_array_equal(load_ivecs(self.tmp / "x.ivecs"), ids)

    def test_bvecs_widened_to_float(self):
        path = self.tmp / "b.bvecs"
        path.write_bytes(_record(3, [0, 128, 255], dtype="u1") + _record(3, [1, 2, 3], dtype="u1"))
        dataset = load_bvecs(path)
        self.assertEqual(dataset.data.dtype, np.float32)
        np.testing.assert_array_equal(dataset.data, [[0, 128, 255], [1, 2, 3]])


class ContainerTests(SimpleTestCase):

    def test_dataset_is_read_only_copy(self):
        source = np.ones((3, 2), dtype=np.float32)
        dataset = Dataset(source)
        source[0, 0] = 5.0
        self.assertEqual(dataset.data[0, 0], 1.0)
        with self.assertRaises(ValueError):
            dataset.data[0, 0] = 2.0

    def test_dataset_rejects_bad_shapes(self):
        with self.assertRaises(DatasetFormatError):
            Dataset(np.ones(4))
        with self.assertRaises(DatasetFormatError):
            Dataset(np.ones((0, 3)))
        with self.assertRaises(DatasetFormatError):
            Dataset(np.array([[1.0, np.inf]]))

    def test_quantized_set_is_a_quarter_of_raw(self):
        dataset = gen_clustered(100, 16, 4, 5.0, seed=1)
        codes = QuantizedSet(np.zeros((dataset.n, dataset.d), dtype=np.uint8))
        self.assertEqual(codes.nbytes, dataset.n * dataset.d)
        self.assertEqual(4 * codes.nbytes, dataset.nbytes)

    def test_quantized_set_requires_uint8(self):
        with self.assertRaises(DatasetFormatError):
            QuantizedSet(np.zeros((2, 2), dtype=np.int16))


class GeneratorTests(SimpleTestCase):

    def test_gen_clustered_deterministic(self):
        a = gen_clustered(500, 8, 5, 10.0, seed=7)
        b = gen_clustered(500, 8, 5, 10.0, seed=7)
        c = gen_clustered(500, 8, 5, 10.0, seed=8)
        np.testing.assert_array_equal(a.data, b.data)
        self.assertFalse(np.array_equal(a.data, c.data))
        self.assertEqual((a.n, a.d), (500, 8))

    def test_gen_clustered_preconditions(self):
        with self.assertRaises(DatasetFormatError):
            gen_clustered(3, 2, 5, 1.0, seed=0)
        with self.assertRaises(DatasetFormatError):
            gen_clustered(10, 2, 2, 0.0, seed=0)
        with self.assertRaises(DatasetFormatError):
            gen_clustered(10, 4, 2, 2.0, seed=0, intrinsic_dim=0)
        with self.assertRaises(DatasetFormatError):
            gen_clustered(10, 4, 2, 2.0, seed=0, noise_floor=-0.1)

    def test_clusters_live_on_their_own_subspace(self):
        flat = gen_clustered(400, 12, 1, 1.0, seed=3, intrinsic_dim=2, noise_floor=0.0)
        centered = flat.data.astype(np.float64) - flat.data.mean(axis=0)
        self.assertEqual(np.linalg.matrix_rank(centered, tol=1e-3), 2)

        full = gen_clustered(400, 12, 1, 1.0, seed=3, intrinsic_dim=None)
        centered = full.data.astype(np.float64) - full.data.mean(axis=0)
        self.assertEqual(np.linalg.matrix_rank(centered, tol=1e-3), 12)

    def test_split_holdout(self):
        dataset = gen_clustered(120, 4, 3, 2.0, seed=2)
        base, held = split_holdout(dataset, 20)
        self.assertEqual((base.n, held.n), (100, 20))
        np.testing.assert_array_equal(held.data, dataset.data[100:])
        for bad in (0, 120):
            with self.assertRaises(DatasetFormatError):
                split_holdout(dataset, bad)

    def test_gen_queries_and_repeat(self):
        dataset = gen_clustered(200, 4, 2, 3.0, seed=0)
        queries = gen_queries(dataset, 30, noise=0.05, seed=1)
        self.assertEqual((queries.n, queries.d), (30, 4))
        tiled = repeat_queries(queries, 75)
        self.assertEqual(tiled.n, 75)
        np.testing.assert_array_equal(tiled.data[30:60], queries.data)
