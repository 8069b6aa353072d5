import numpy as np
import pytest

from fscil_tricks.errors import DataError, UndefinedSeparationError
from fscil_tricks.geometry import Prototype, PrototypeClassifier, make_etf_frame
from fscil_tricks.metrics import (
    GeometryReport,
    SessionResult,
    class_separation,
    cumulative_distance_distribution,
    evaluate_session,
    geometry_report,
    inter_class_distance,
    intra_class_distance,
    session_result_from_predictions,
)
from fscil_tricks.protocol import LabeledSample

from oracles import cosine_reference, random_unit_rows, separation_reference


class TestInterClass:
    def test_equal_prototypes(self):
        w = np.array([0.6, 0.8])
        assert inter_class_distance(w, w) < 1e-12

    def test_orthogonal(self):
        assert abs(inter_class_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) - 1.0) < 1e-12

    def test_antipodal(self):
        w = np.array([0.0, 1.0])
        assert abs(inter_class_distance(w, -w) - 2.0) < 1e-12

    def test_symmetric_and_scale_free(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        assert inter_class_distance(a, b) == pytest.approx(inter_class_distance(b, a), abs=1e-14)
        assert inter_class_distance(3 * a, b) == pytest.approx(
            inter_class_distance(a, b), abs=1e-12
        )

    def test_zero_vector_errors(self):
        with pytest.raises(DataError):
            inter_class_distance(np.zeros(3), np.ones(3))


class TestIntraClass:
    def test_samples_equal_prototype(self):
        w = np.array([1.0, 0.0])
        assert intra_class_distance(np.stack([w, w, w]), w) < 1e-12

    def test_two_orthogonal_samples(self):
        w = np.array([1.0, 0.0])
        samples = np.array([[0.0, 1.0], [0.0, -1.0]])
        assert abs(intra_class_distance(samples, w) - 1.0) < 1e-12

    def test_matches_direct_loop(self):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal((100, 6))
        w = rng.standard_normal(6)
        manual = sum(1.0 - cosine_reference(s, w) for s in samples) / 100
        assert abs(intra_class_distance(samples, w) - manual) < 1e-12

    def test_empty_errors(self):
        with pytest.raises(DataError):
            intra_class_distance(np.zeros((0, 3)), np.ones(3))


class TestClassSeparation:
    def test_two_point_classes_fully_separated(self):
        z = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5)
        y = [0] * 5 + [1] * 5
        assert class_separation(z, y) == pytest.approx(1.0, abs=1e-12)

    def test_single_class_is_zero(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((10, 4))
        assert class_separation(z, [3] * 10) == 0.0

    def test_identical_embeddings_undefined(self):
        z = np.tile(np.array([0.6, 0.8]), (6, 1))
        with pytest.raises(UndefinedSeparationError):
            class_separation(z, [0, 0, 0, 1, 1, 1])

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_quadruple_loop(self, seed):
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(3, 9)) for _ in range(3)]
        z = np.concatenate([rng.standard_normal((n, 5)) for n in sizes])
        y = np.concatenate([[c] * n for c, n in enumerate(sizes)])
        assert abs(class_separation(z, y) - separation_reference(z, y)) < 1e-10

    def test_orthogonal_transform_invariance(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((12, 6))
        y = rng.integers(0, 3, size=12)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        assert class_separation(z @ q, y) == pytest.approx(class_separation(z, y), abs=1e-10)

    def test_uniform_rescale_invariance(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((10, 4))
        y = rng.integers(0, 2, size=10)
        assert class_separation(17.3 * z, y) == pytest.approx(class_separation(z, y), abs=1e-12)


class TestCdf:
    def test_constant_values_step_function(self):
        cdf = dict(cumulative_distance_distribution([0.5] * 7))
        assert cdf[0.49] == 0.0 and cdf[0.5] == 1.0 and cdf[2.0] == 1.0

    def test_three_values(self):
        cdf = dict(cumulative_distance_distribution([0.0, 1.0, 2.0]))
        assert cdf[1.0] == pytest.approx(2 / 3)

    def test_matches_counting_oracle_exactly(self):
        rng = np.random.default_rng(7)
        values = rng.uniform(0, 2, size=1000)
        for t, p in cumulative_distance_distribution(values):
            assert p == np.sum(values <= t) / 1000

    def test_empty_errors(self):
        with pytest.raises(DataError):
            cumulative_distance_distribution([])


class TestSessionResult:
    def test_always_class0_on_class0_test(self):
        res = session_result_from_predictions([0] * 9, [0] * 9, [0, 1], [0, 1], 0)
        assert res.total_accuracy == 1.0

    def test_session_zero_has_no_novel_accuracy(self):
        res = session_result_from_predictions([0, 1, 0], [0, 1, 1], [0, 1], [0, 1], 0)
        assert res.novel_accuracy is None
        assert res.total_accuracy == pytest.approx(2 / 3)

    def test_counting_oracle_on_fixed_predictions(self):
        rng = np.random.default_rng(8)
        seen = list(range(10))
        y_true = rng.integers(0, 10, size=400).tolist()
        y_pred = rng.integers(0, 10, size=400).tolist()
        res = session_result_from_predictions(y_true, y_pred, seen, [0, 1, 2, 3], 2)
        hits = sum(t == p for t, p in zip(y_true, y_pred))
        assert res.total_accuracy == hits / 400
        base_idx = [i for i, t in enumerate(y_true) if t < 4]
        base_hits = sum(y_true[i] == y_pred[i] for i in base_idx)
        assert res.base_accuracy == base_hits / len(base_idx)
        novel_idx = [i for i, t in enumerate(y_true) if t >= 4]
        novel_hits = sum(y_true[i] == y_pred[i] for i in novel_idx)
        assert res.novel_accuracy == novel_hits / len(novel_idx)

    def test_confusion_invariants(self):
        rng = np.random.default_rng(9)
        y_true = rng.integers(0, 5, size=200).tolist()
        y_pred = rng.integers(0, 5, size=200).tolist()
        res = session_result_from_predictions(y_true, y_pred, range(5), [0, 1], 1)
        assert res.total_accuracy == np.trace(res.confusion) / res.confusion.sum()
        for i, c in enumerate(res.class_order):
            assert res.confusion[i].sum() == y_true.count(c)

    def test_uncovered_label_errors(self):
        with pytest.raises(DataError):
            session_result_from_predictions([0, 7], [0, 0], [0, 1], [0], 0)

    def test_roundtrip(self):
        res = session_result_from_predictions([0, 1, 1], [0, 1, 0], [0, 1], [0], 1)
        back = SessionResult.from_dict(res.to_dict())
        assert back.total_accuracy == res.total_accuracy
        assert np.array_equal(back.confusion, res.confusion)


class TestEvaluateSession:
    def test_identity_encoder_counting(self):
        protos = tuple(Prototype(i, np.eye(3)[i], 1) for i in range(3))
        clf = PrototypeClassifier(protos)
        samples = [
            LabeledSample(np.full((2, 2, 3), 1e-3, dtype=np.float32) + np.eye(3)[i % 3].reshape(1, 1, 3).astype(np.float32), i % 3, f"s{i}")
            for i in range(9)
        ]

        def encode(images):
            return images.mean(axis=(1, 2))

        result, embeddings = evaluate_session(clf, encode, samples, [0, 1], 1)
        assert result.total_accuracy == 1.0
        assert embeddings.shape == (9, 3)
        assert result.novel_accuracy == 1.0


class TestGeometryReport:
    def test_etf_vertex_synthetic_exact_geometry(self):
        K = 6
        frame = make_etf_frame(K, 16, seed=0)
        reps = 10
        z = np.repeat(frame.vectors, reps, axis=0)
        y = np.repeat(np.arange(K), reps)
        report = geometry_report(z, y, base_class_ids=[0, 1, 2], session_index=0)
        expected_inter = 1.0 + 1.0 / (K - 1)
        for v in report.inter_class.values():
            assert abs(v - expected_inter) < 1e-6
        for v in report.intra_class.values():
            assert abs(v) < 1e-6
        assert report.separation["all"] == pytest.approx(1.0, abs=1e-9)

    def test_report_roundtrip(self):
        rng = np.random.default_rng(11)
        z = random_unit_rows(rng, 30, 8)
        y = rng.integers(0, 3, size=30)
        report = geometry_report(z, y, base_class_ids=[0], session_index=2)
        back = GeometryReport.from_dict(report.to_dict())
        assert back.inter_class == report.inter_class
        assert back.intra_class == report.intra_class
        assert back.separation == report.separation
        assert set(report.inter_class) == {(0, 1), (0, 2), (1, 2)}
