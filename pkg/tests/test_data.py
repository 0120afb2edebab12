import numpy as np
import pytest

from sfda_lab.config import default_domains
from sfda_lab.data import DataError, Dataset, DomainSpec, generate, load_csv, save_csv
from sfda_lab.source_trainer import SourceConfig, accuracy, train_source


def test_unida_label_bookkeeping():
    source, target_train, target_eval = generate(DomainSpec(n_shared=6, n_source_private=4, n_target_private=4))
    assert sorted(set(source.labels.tolist())) == list(range(10))
    assert source.meta["num_classes"] == 10
    assert target_train.labels is None and target_train.is_private is None
    shared = target_eval.labels[~target_eval.is_private]
    private = target_eval.labels[target_eval.is_private]
    assert sorted(set(shared.tolist())) == list(range(6))
    assert set(private.tolist()) == set(range(10, 14))
    # no target-private class id overlaps a source class id
    assert not set(private.tolist()) & set(source.labels.tolist())


def test_exact_counts():
    spec = DomainSpec(n_shared=5, n_source_private=2, n_target_private=3, samples_per_class=7)
    source, target_train, target_eval = generate(spec)
    assert len(source) == 7 * 7
    assert len(target_train) == len(target_eval) == 8 * 7
    assert np.bincount(source.labels).tolist() == [7] * 7


def test_generation_is_deterministic():
    a = generate(DomainSpec(seed=4))
    b = generate(DomainSpec(seed=4))
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
    c = generate(DomainSpec(seed=5))
    assert a[0].features.tobytes() != c[0].features.tobytes()


def test_invalid_spec_rejected():
    with pytest.raises(DataError):
        generate(DomainSpec(n_shared=0))


def test_csv_round_trip(tmp_path):
    _, _, ev = generate(DomainSpec(n_shared=3, n_target_private=2, samples_per_class=5))
    path = save_csv(ev, tmp_path / "eval.csv")
    back = load_csv(path)
    np.testing.assert_allclose(back.features, ev.features, rtol=0, atol=1e-12)
    assert np.array_equal(back.labels, ev.labels)
    assert np.array_equal(back.is_private, ev.is_private)
    assert back.meta["num_classes"] == 3


def test_small_csv_infers_class_count(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("f0,f1,label\n0.5,1.0,0\n-1.0,2.0,2\n3.0,0.0,1\n")
    d = load_csv(p, domain="source", require_labels=True)
    assert d.features.shape == (3, 2)
    assert d.meta["num_classes"] == 3


@pytest.mark.parametrize(
    "body, needle",
    [
        ("f0,f1,label\n0.5,1.0,0\nnan,2.0,1\n", ":3:"),
        ("f0,f1,label\n0.5,1.0,0\n0.1,2.0\n", ":3:"),
        ("f0,f1,label\n0.5,1.0,x\n", ":2:"),
        ("a,b\n1,2\n", ":1:"),
        ("f0,is_private\n0.5,2\n", ":2:"),
    ],
)
def test_malformed_csv_reports_line(tmp_path, body, needle):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=needle):
        load_csv(p)


def test_missing_labels_when_required(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("f0\n1.0\n")
    with pytest.raises(DataError):
        load_csv(p, require_labels=True)


def test_accuracy_falls_as_shift_grows():
    accs = []
    for shift in (0.0, 1.0, 2.0, 4.0):
        source, _, ev = generate(DomainSpec(n_shared=10, shift=shift, rotation=0.0, seed=0))
        res = train_source(source, SourceConfig(seed=0), 10)
        accs.append(accuracy(res.last, ev.features, ev.labels))
    inversions = [(a, b) for a, b in zip(accs, accs[1:]) if b > a]
    assert len(inversions) <= 1
    assert all(b - a <= 0.01 for a, b in inversions)
    assert accs[0] > accs[-1]


def test_noshift_control_gap():
    spec = default_domains()["noshift"]
    source, _, ev = generate(spec)
    res = train_source(source, SourceConfig(seed=0), source.meta["num_classes"])
    held = source.subset(res.val_idx)
    gap = abs(accuracy(res.last, held.features, held.labels) - accuracy(res.last, ev.features, ev.labels))
    assert gap <= 0.05


def test_unlabeled_view_drops_annotations():
    _, _, ev = generate(DomainSpec(n_shared=3, n_target_private=1, samples_per_class=4))
    u = ev.unlabeled()
    assert u.labels is None and u.is_private is None
    assert isinstance(u, Dataset) and u.features is not None


@pytest.mark.parametrize("track", ["places", "imnet", "noshift"])
def test_closed_set_tracks_have_no_private_samples(track):
    spec = default_domains()[track]
    assert spec.n_source_private == spec.n_target_private == 0
    source, target_train, target_eval = generate(spec)
    assert not target_eval.is_private.any()
    assert target_train.labels is None and target_train.is_private is None
    assert set(target_eval.labels.tolist()) == set(source.labels.tolist())
