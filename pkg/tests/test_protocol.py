import numpy as np
import pytest

from fscil_tricks.errors import (
    DataError,
    InsufficientClassesError,
    InsufficientShotsError,
)
from fscil_tricks.protocol import (
    ALL_SHOTS,
    build_task_stream,
    cumulative_test_set,
    export_split,
    replay_split,
)

from conftest import tiny_dataset


class TestBuildTaskStream:
    def test_contiguous_class_blocks(self):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, base_classes=6, ways=2, shots=5, n_sessions=2, seed=0)
        assert [s.class_ids for s in stream.sessions] == [tuple(range(6)), (6, 7), (8, 9)]
        assert stream.sessions[0].shots_per_class is ALL_SHOTS
        assert all(s.shots_per_class == 5 for s in stream.sessions[1:])
        assert stream.sessions[1].ways == 2

    def test_base_session_takes_all_samples(self):
        ds = tiny_dataset(n_classes=6, train_per_class=9)
        stream = build_task_stream(ds, base_classes=6, ways=1, shots=1, n_sessions=0, seed=0)
        assert stream.n_sessions == 1
        assert len(stream.train_sets[0]) == 54

    def test_exact_shot_counts(self):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, base_classes=6, ways=2, shots=5, n_sessions=2, seed=3)
        for t in (1, 2):
            labels = [s.label for s in stream.train_sets[t]]
            for cid in stream.sessions[t].class_ids:
                assert labels.count(cid) == 5

    def test_deterministic_under_seed(self):
        ds = tiny_dataset(n_classes=10)
        a = build_task_stream(ds, 6, 2, 5, 2, seed=0)
        b = build_task_stream(ds, 6, 2, 5, 2, seed=0)
        c = build_task_stream(ds, 6, 2, 5, 2, seed=1)
        ids = lambda s: [[x.sample_id for x in t] for t in s.train_sets]
        assert ids(a) == ids(b)
        assert ids(a) != ids(c)

    def test_shot_sampling_ignores_dataset_order(self):
        ds = tiny_dataset(n_classes=8)
        shuffled = type(ds)(tuple(reversed(ds.train)), ds.test)
        a = build_task_stream(ds, 4, 2, 3, 2, seed=5)
        b = build_task_stream(shuffled, 4, 2, 3, 2, seed=5)
        ids = lambda s: [sorted(x.sample_id for x in t) for t in s.train_sets]
        assert ids(a) == ids(b)

    def test_shuffled_class_mode(self):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, 6, 2, 5, 2, seed=1, shuffle_classes=True)
        all_ids = sorted(cid for s in stream.sessions for cid in s.class_ids)
        assert all_ids == list(range(10))
        assert stream.sessions[0].class_ids != tuple(range(6))

    def test_insufficient_classes(self):
        ds = tiny_dataset(n_classes=8)
        with pytest.raises(InsufficientClassesError):
            build_task_stream(ds, base_classes=6, ways=2, shots=5, n_sessions=2, seed=0)

    def test_insufficient_shots_names_class(self):
        ds = tiny_dataset(n_classes=10, train_per_class=3)
        with pytest.raises(InsufficientShotsError) as err:
            build_task_stream(ds, base_classes=6, ways=2, shots=5, n_sessions=2, seed=0)
        assert err.value.class_id in (6, 7, 8, 9)
        assert "5 shots" in str(err.value)


class TestCumulativeTestSet:
    def test_session_zero_is_base_test(self):
        ds = tiny_dataset(n_classes=10, test_per_class=4)
        stream = build_task_stream(ds, 6, 2, 5, 2, seed=0)
        base = cumulative_test_set(stream, 0)
        assert {s.label for s in base} == set(range(6))
        assert len(base) == 24

    def test_last_session_covers_every_class(self):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, 6, 2, 5, 2, seed=0)
        assert {s.label for s in cumulative_test_set(stream, 2)} == set(range(10))

    def test_manual_union_at_t1(self):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, 6, 2, 5, 2, seed=0)
        got = {s.sample_id for s in cumulative_test_set(stream, 1)}
        expected = {s.sample_id for s in ds.test if s.label < 8}
        assert got == expected

    def test_out_of_range(self):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, 6, 2, 5, 2, seed=0)
        with pytest.raises(DataError):
            cumulative_test_set(stream, 3)
        with pytest.raises(DataError):
            cumulative_test_set(stream, -1)


class TestStreamProperties:
    @pytest.mark.parametrize("seed", range(30))
    def test_randomized_streams_satisfy_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n_classes = int(rng.integers(3, 12))
        shots_avail = int(rng.integers(2, 8))
        ds = tiny_dataset(n_classes=n_classes, train_per_class=shots_avail, test_per_class=2, seed=seed)
        ways = int(rng.integers(1, 4))
        max_sessions = (n_classes - 1) // ways
        n_sessions = int(rng.integers(0, max_sessions + 1))
        base = n_classes - ways * n_sessions
        shots = int(rng.integers(1, shots_avail + 1))
        stream = build_task_stream(ds, base, ways, shots, n_sessions, seed=seed,
                                   shuffle_classes=bool(rng.integers(0, 2)))

        seen = set()
        for spec in stream.sessions:
            assert not seen.intersection(spec.class_ids)
            seen.update(spec.class_ids)
        sizes = [len(t) for t in stream.test_sets]
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))
        for t in range(1, stream.n_sessions):
            labels = [s.label for s in stream.train_sets[t]]
            assert len(labels) == ways * shots
            for cid in stream.sessions[t].class_ids:
                assert labels.count(cid) == shots


class TestSplitExport:
    def test_roundtrip_reproduces_stream(self, tmp_path):
        ds = tiny_dataset(n_classes=10)
        stream = build_task_stream(ds, 6, 2, 5, 2, seed=9)
        export_split(stream, tmp_path / "split.json")
        back = replay_split(ds, tmp_path / "split.json")
        assert [s.class_ids for s in back.sessions] == [s.class_ids for s in stream.sessions]
        for t in range(stream.n_sessions):
            assert [s.sample_id for s in back.train_sets[t]] == [
                s.sample_id for s in stream.train_sets[t]
            ]
            assert [s.sample_id for s in back.test_sets[t]] == [
                s.sample_id for s in stream.test_sets[t]
            ]

    def test_replay_with_missing_sample_errors(self, tmp_path):
        ds = tiny_dataset(n_classes=6)
        stream = build_task_stream(ds, 4, 1, 2, 2, seed=0)
        export_split(stream, tmp_path / "split.json")
        smaller = tiny_dataset(n_classes=6, train_per_class=1)
        with pytest.raises(DataError):
            replay_split(smaller, tmp_path / "split.json")
