import numpy as np
import pytest

from hemtriage.errors import ConfigError, FormatError, InfeasibleError
from hemtriage.folds import (FoldAssignment, assign_folds, generate_oof, load_fold_csv,
                             save_fold_csv)
from hemtriage.volume import ManifestRow, ScanLabels

from conftest import MemorizingClassifier, labels_from_matrix, make_volume


def row(scan_id, patient_id, vector=(0, 0, 0, 0, 0)):
    return ManifestRow(scan_id, patient_id, f"{scan_id}.ctv", ScanLabels.from_vector(vector))


class TestAssignFolds:
    def test_patients_stay_together(self):
        rows = [row("s0", "pA"), row("s1", "pA", (1, 0, 0, 0, 0)),
                row("s2", "pB"), row("s3", "pB")]
        assignment = assign_folds(rows, k=2)
        assert assignment.fold_of["s0"] == assignment.fold_of["s1"]
        assert assignment.fold_of["s2"] == assignment.fold_of["s3"]

    def test_eight_singletons_pigeonhole(self):
        rows = [row(f"s{i}", f"p{i}", (1, 0, 0, 0, 0) if i < 4 else (0,) * 5)
                for i in range(8)]
        assignment = assign_folds(rows, k=8)
        assert sorted(assignment.fold_of[f"s{i}"] for i in range(8)) == list(range(8))

    def test_exact_split_for_singleton_patients(self):
        # 100 single-scan patients, 20 positive, k=5: greedy balancing must
        # land exactly 4 positives and 20 scans in every fold.
        rows = [row(f"s{i:03d}", f"p{i:03d}", (0, 1, 0, 0, 0) if i < 20 else (0,) * 5)
                for i in range(100)]
        assignment = assign_folds(rows, k=5)
        fold_pos = np.zeros(5, dtype=int)
        fold_size = np.zeros(5, dtype=int)
        for i in range(100):
            fold = assignment.fold_of[f"s{i:03d}"]
            fold_size[fold] += 1
            if i < 20:
                fold_pos[fold] += 1
        assert fold_pos.tolist() == [4] * 5
        assert fold_size.tolist() == [20] * 5

    def test_row_order_invariance(self, rng):
        rows = [row(f"s{i}", f"p{i // 2}", tuple(rng.integers(0, 2, 5))) for i in range(30)]
        forward = assign_folds(rows, k=4, seed=9)
        shuffled = list(rows)
        rng.shuffle(shuffled)
        backward = assign_folds(shuffled, k=4, seed=9)
        assert forward.fold_of == backward.fold_of

    def test_deterministic_given_seed(self, rng):
        rows = [row(f"s{i}", f"p{i}", tuple(rng.integers(0, 2, 5))) for i in range(24)]
        assert assign_folds(rows, 4, seed=2).fold_of == assign_folds(rows, 4, seed=2).fold_of

    def test_k_exceeding_patient_groups(self):
        rows = [row("s0", "pA"), row("s1", "pA"), row("s2", "pB")]
        with pytest.raises(InfeasibleError):
            assign_folds(rows, k=3)

    def test_k_below_two(self):
        with pytest.raises(ConfigError):
            assign_folds([row("s0", "p0")], k=1)

    def test_every_scan_assigned_once(self, rng):
        rows = [row(f"s{i}", f"p{i // 3}", tuple(rng.integers(0, 2, 5))) for i in range(60)]
        assignment = assign_folds(rows, k=5, seed=0)
        assert sorted(assignment.fold_of) == sorted(r.scan_id for r in rows)

    def test_per_label_balance_within_group_max(self, rng):
        # Post-condition: per-fold positives per label within +- (largest
        # patient-group count for that label) of the ideal share.
        rows = []
        for i in range(90):
            vector = tuple(rng.integers(0, 2, 5) * (rng.random() < 0.4))
            rows.append(row(f"s{i}", f"p{i // 2}", vector))
        k = 4
        assignment = assign_folds(rows, k=k, seed=1)
        labels = np.array([list(r.labels.vector()) + [r.labels.any] for r in rows], dtype=float)
        group_of = {}
        for r in rows:
            group_of.setdefault(r.patient_id, []).append(r)
        for col in range(6):
            totals = labels[:, col].sum()
            ideal = totals / k
            group_max = max(sum(float(list(g.labels.vector())[col]) if col < 5 else float(g.labels.any)
                                for g in group) for group in group_of.values())
            fold_counts = np.zeros(k)
            for i, r in enumerate(rows):
                fold_counts[assignment.fold_of[r.scan_id]] += labels[i, col]
            assert np.all(np.abs(fold_counts - ideal) <= group_max + 1e-9), (col, fold_counts, ideal)


class TestFoldCsv:
    def test_round_trip(self, tmp_path):
        rows = [row("s0", "pA"), row("s1", "pA"), row("s2", "pB")]
        assignment = assign_folds(rows, k=2)
        path = tmp_path / "folds.csv"
        save_fold_csv(rows, assignment, path)
        loaded = load_fold_csv(path)
        assert loaded.fold_of == assignment.fold_of

    def test_split_patient_rejected(self, tmp_path):
        path = tmp_path / "folds.csv"
        path.write_text("scan_id,patient_id,fold\ns0,pA,0\ns1,pA,1\n")
        with pytest.raises(FormatError, match="split"):
            load_fold_csv(path)


def two_slice_volume(scan_id, patient_id, positive, seed):
    matrix = np.zeros((2, 5), dtype=bool)
    if positive:
        matrix[:, 0] = True
    return make_volume(scan_id=scan_id, patient_id=patient_id, num_slices=2,
                       height=6, width=6, seed=seed, labels=labels_from_matrix(matrix))


class TestGenerateOof:
    def build(self, n=12):
        volumes = [two_slice_volume(f"s{i}", f"p{i}", positive=i % 3 == 0, seed=100 + i)
                   for i in range(n)]
        rows = [row(v.scan_id, v.patient_id,
                    tuple(int(x) for x in v.labels.vector())) for v in volumes]
        return volumes, rows

    def test_memorizer_cannot_score_oof(self):
        # The leakage sentinel: a memorizing classifier is perfect in-fold by
        # construction, so any out-of-fold perfection would prove leakage.
        volumes, rows = self.build()
        assignment = assign_folds(rows, k=3, seed=0)

        def train_fn(train_volumes, seed):
            return MemorizingClassifier(train_volumes)

        oof = generate_oof(volumes, assignment, train_fn)
        for volume in volumes:
            np.testing.assert_allclose(oof[volume.scan_id], 0.5)

        in_fold = MemorizingClassifier(volumes)
        from hemtriage.slicemodel import predict_slices
        for volume in volumes:
            rows_pred = predict_slices(volume, [in_fold])
            assert np.array_equal(rows_pred >= 0.5, volume.labels.slice_labels)

    def test_covers_every_slice_once(self):
        volumes, rows = self.build()
        assignment = assign_folds(rows, k=4, seed=0)
        oof = generate_oof(volumes, assignment,
                           lambda train_volumes, seed: MemorizingClassifier(train_volumes))
        assert sorted(oof) == sorted(v.scan_id for v in volumes)
        assert all(oof[v.scan_id].shape == (v.num_slices, 5) for v in volumes)

    def test_deterministic(self):
        volumes, rows = self.build()
        assignment = assign_folds(rows, k=3, seed=1)

        def train_fn(train_volumes, seed):
            return MemorizingClassifier(train_volumes)

        a = generate_oof(volumes, assignment, train_fn, seed=5)
        b = generate_oof(volumes, assignment, train_fn, seed=5)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_missing_assignment_rejected(self):
        volumes, rows = self.build(6)
        assignment = FoldAssignment(k=2, fold_of={v.scan_id: 0 for v in volumes[:-1]})
        with pytest.raises(ConfigError):
            generate_oof(volumes, assignment, lambda tv, s: MemorizingClassifier(tv))

    def test_fold_without_positives_warns_and_falls_back(self):
        # All positives for one type live in a single fold: training folds
        # that exclude them see a one-class target and warn (base-rate output).
        from hemtriage.slicemodel import reference_train_fn

        volumes = []
        for i in range(6):
            matrix = np.zeros((2, 5), dtype=bool)
            if i == 0:
                matrix[:, 4] = True  # only scan 0 carries IPH
            volumes.append(make_volume(scan_id=f"s{i}", patient_id=f"p{i}", num_slices=2,
                                       height=8, width=8, seed=300 + i,
                                       labels=labels_from_matrix(matrix)))
        rows_ = [row(v.scan_id, v.patient_id, tuple(int(x) for x in v.labels.vector()))
                 for v in volumes]
        assignment = assign_folds(rows_, k=3, seed=0)
        with pytest.warns(UserWarning, match="one class"):
            oof = generate_oof(volumes, assignment, reference_train_fn())
        # s0's model trains without s0's fold, so it never sees an IPH
        # positive and predicts the clipped base rate for that type.
        np.testing.assert_allclose(oof["s0"][:, 4], 1e-6)
