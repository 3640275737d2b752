"""End to end checks over the labeled fixtures and the synthetic corpus"""

import csv

import numpy as np
import pytest

from dataset import corpus_graphs, edge_f1, read_manifest, read_pairs, write_manifest
from embedding import EmbeddingModel, embed_ssg, evaluate_pairs, gradient_check, load_model, similarity
from generate_corpus import generate_corpus
from index_add import index_add
from make_pairs import make_pairs
from split_corpus import split
from ssg import construct_ssgs
from sweep_hyperparams import sweep
from train_model import train_model
from vector_index import VectorIndex
import fixtures


def _labeled_edges():
    """(predicted, expected) edge sets per fixture, tagged with the fixture name"""
    for fixture in fixtures.labeled_fixtures():
        ssg = construct_ssgs(fixture.code)[fixture.selector]
        yield (fixture.name,
               {(fixture.name, edge) for edge in fixtures.scfg_labels(ssg)}, {(fixture.name, edge) for edge in fixture.scfg},
               {(fixture.name, edge) for edge in fixtures.sdfg_labels(ssg)}, {(fixture.name, edge) for edge in fixture.sdfg})

def _build_pipeline(root, classes, variants, epochs, embed_size, seed):
    corpus_dir = root / "corpus"
    generate_corpus(out_dir=str(corpus_dir), classes=classes, variants=variants, seed=seed)
    manifest = corpus_dir / "manifest.json"
    split(manifest=str(manifest), out_dir=str(root / "splits"), seed=seed)
    for name in ("train", "val", "test"):
        make_pairs(manifest=str(root / "splits" / f"{name}.json"), out_file=str(root / f"{name}.pairs"), seed=seed)
    model = root / "model.json"
    train_model(pairs=str(root / "train.pairs"), corpus=[str(manifest)], out_file=str(model),
                val_pairs=str(root / "val.pairs"), epochs=epochs, lr=0.01, batch=32, embed_size=embed_size, seed=seed)
    index_add(db_file=str(root / "index.db"), model_file=str(model), input_path=str(corpus_dir / "ssg"), seed=seed)
    return manifest


def test_fixture_suite_is_large_enough():
    assert len(fixtures.LABELED_FIXTURES) >= 10

def test_fixture_edge_f1():
    scfg_predicted, scfg_expected, sdfg_predicted, sdfg_expected = set(), set(), set(), set()
    for name, scfg_p, scfg_e, sdfg_p, sdfg_e in _labeled_edges():
        assert edge_f1(sdfg_p, sdfg_e).f1 >= 0.89, name
        scfg_predicted |= scfg_p
        scfg_expected |= scfg_e
        sdfg_predicted |= sdfg_p
        sdfg_expected |= sdfg_e
    assert edge_f1(scfg_predicted, scfg_expected).f1 == 1.0
    assert edge_f1(sdfg_predicted, sdfg_expected).f1 >= 0.95

def test_identity_contract():
    model = EmbeddingModel.initialize(embed_size=16, depth=2, seed=3)
    for fixture in fixtures.labeled_fixtures():
        for ssg in construct_ssgs(fixture.code).values():
            vector = embed_ssg(ssg, model)
            if vector.any():
                assert similarity(vector, embed_ssg(ssg, model)) == pytest.approx(1.0, abs=1e-6)

@pytest.mark.parametrize("seed", range(10))
def test_gradient_check_over_seeds(seed):
    graphs = {}
    for builder in (fixtures.approve, fixtures.diamond, fixtures.loop, fixtures.store_const, fixtures.external_call):
        fixture = builder()
        graphs[fixture.name] = construct_ssgs(fixture.code)[fixture.selector]
    batch = [("approve", "diamond", -1), ("diamond", "loop", 1), ("store_const", "external_call", -1)]
    model = EmbeddingModel.initialize(embed_size=8, depth=1, seed=seed)
    assert gradient_check(model, batch, graphs, seed=seed).max_error < 1e-4

def test_search_matches_brute_force_at_scale():
    rng = np.random.default_rng(42)
    vectors = rng.normal(size=(100000, 16))
    index = VectorIndex(16)
    index.add_many(((f"c{idx:06d}", "0x00000001"), vector) for idx, vector in enumerate(vectors))
    units = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    for _ in range(3):
        query = rng.normal(size=16)
        scores = units @ (query / np.linalg.norm(query))
        order = sorted(range(len(scores)), key=lambda idx: (-scores[idx], idx))
        for k in (1, 10, 100):
            results = index.search(query, k)
            assert [origin for (origin, _), _ in results] == [f"c{idx:06d}" for idx in order[:k]]

def test_pipeline_is_deterministic(tmp_path):
    artifacts = ("splits/train.json", "train.pairs", "test.pairs", "model.json", "model.log.csv", "index.db")
    runs = []
    for run in ("a", "b"):
        _build_pipeline(tmp_path / run, classes=20, variants=2, epochs=2, embed_size=8, seed=5)
        runs.append({name: (tmp_path / run / name).read_bytes() for name in artifacts})
    assert runs[0] == runs[1]

def test_auc_barely_moves_with_embedding_size(tmp_path):
    manifest = tmp_path / "corpus" / "manifest.json"
    generate_corpus(out_dir=str(manifest.parent), classes=40, variants=3, seed=2)
    split(manifest=str(manifest), out_dir=str(tmp_path / "splits"), seed=2)
    make_pairs(manifest=str(tmp_path / "splits" / "train.json"), out_file=str(tmp_path / "train.pairs"), seed=2)
    make_pairs(manifest=str(tmp_path / "splits" / "val.json"), out_file=str(tmp_path / "val.pairs"), seed=2)
    held_out = read_manifest(tmp_path / "splits" / "val.json", load=False) + read_manifest(tmp_path / "splits" / "test.json", load=False)
    write_manifest(tmp_path / "splits" / "held_out.json", held_out)
    make_pairs(manifest=str(tmp_path / "splits" / "held_out.json"), out_file=str(tmp_path / "held_out.pairs"), negatives=144, seed=2)
    out = tmp_path / "sweep.csv"
    sweep(train_pairs=str(tmp_path / "train.pairs"), val_pairs=str(tmp_path / "val.pairs"), test_pairs=str(tmp_path / "held_out.pairs"),
          corpus=[str(manifest)], out_file=str(out), embed_sizes=[32, 64, 128], epochs=15, lr=0.01, batch=32, seed=2)
    with open(out, newline="", encoding="utf-8") as handle:
        aucs = {int(row["value"]): float(row["test_auc"]) for row in csv.DictReader(handle)}
    assert sorted(aucs) == [32, 64, 128]
    assert max(aucs.values()) - min(aucs.values()) <= 0.05

@pytest.mark.slow
def test_training_learns_to_separate_variants(tmp_path):
    manifest = _build_pipeline(tmp_path, classes=20, variants=4, epochs=50, embed_size=64, seed=0)
    graphs = corpus_graphs(read_manifest(manifest))
    test_pairs = read_pairs(tmp_path / "test.pairs")
    _, untrained_auc = evaluate_pairs(EmbeddingModel.initialize(embed_size=64, seed=0), test_pairs, graphs)
    _, trained_auc = evaluate_pairs(load_model(tmp_path / "model.json"), test_pairs, graphs)
    assert trained_auc >= 0.90
    assert trained_auc - untrained_auc >= 0.15
