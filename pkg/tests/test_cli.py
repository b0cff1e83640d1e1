import json
import subprocess
import sys

import numpy as np
import pytest

from stylekit import cli, store
from stylekit.identity_sampler import read_identities
from stylekit.token_planner import load_plan

from conftest import unit_rows


@pytest.fixture
def vocab_file(tmp_path, rng):
    emb = store.EmbeddingMatrix(rng.standard_normal((12, 6)).astype(np.float32), role="token")
    vocab = store.TokenVocabulary.from_ranked_tokens([f"tok{i:02d}" for i in range(12)], emb)
    return store.save_vocabulary(vocab, tmp_path / "vocab.json")


def image_set_files(tmp_path, rng, n_gen=8, n_ref=3, dim=6):
    gen_ids = [f"g{i:03d}" for i in range(n_gen)]
    refs_ids = [f"r{i}" for i in range(n_ref)]
    gen = store.ImageSet(
        tuple(gen_ids),
        store.EmbeddingMatrix(unit_rows(rng.standard_normal((n_gen, dim))), normalized=True, role="clip"),
        store.EmbeddingMatrix(unit_rows(rng.standard_normal((n_gen, dim))), normalized=True, role="style"),
    )
    refs = store.ImageSet(
        tuple(refs_ids),
        store.EmbeddingMatrix(unit_rows(rng.standard_normal((n_ref, dim))), normalized=True, role="clip"),
        store.EmbeddingMatrix(unit_rows(rng.standard_normal((n_ref, dim))), normalized=True, role="style"),
    )
    return store.save_image_set(gen, tmp_path / "gen.json"), store.save_image_set(refs, tmp_path / "refs.json")


def test_plan_command_both_strategies(tmp_path, vocab_file):
    out = tmp_path / "plan.json"
    code = cli.main(["plan", "--vocab", str(vocab_file), "--n", "4", "--strategy", "clustered",
                     "--seed", "42", "--out", str(out)])
    assert code == 0
    plan = load_plan(out)
    assert plan.strategy == "clustered" and plan.n_characters == 4 and plan.seed == 42
    code = cli.main(["plan", "--vocab", str(vocab_file), "--n", "4", "--strategy", "rarest",
                     "--seed", "42", "--out", str(out)])
    assert code == 0
    assert load_plan(out).specific_ids == ("tok01", "tok02", "tok03", "tok04")


def test_sample_command_all_modes(tmp_path, vocab_file):
    plan_path = tmp_path / "plan.json"
    assert cli.main(["plan", "--vocab", str(vocab_file), "--n", "3", "--strategy", "rarest",
                     "--seed", "1", "--out", str(plan_path)]) == 0
    for mode in ("token", "univar", "multivar"):
        out = tmp_path / f"ids_{mode}.jsonl"
        code = cli.main(["sample", "--plan", str(plan_path), "--vocab", str(vocab_file),
                         "--mode", mode, "--count", "400", "--seed", "7", "--out", str(out)])
        assert code == 0
        payloads = read_identities(out)
        assert len(payloads) == 400
        if mode == "token":
            assigned = set(load_plan(plan_path).assigned_tokens())
            assert not any(p.token_text in assigned for p in payloads)
        else:
            assert all(p.vector.shape == (6,) for p in payloads)


def test_sample_match_token_norm(tmp_path, vocab_file):
    plan_path = tmp_path / "plan.json"
    cli.main(["plan", "--vocab", str(vocab_file), "--n", "2", "--strategy", "rarest", "--seed", "1",
              "--out", str(plan_path)])
    out = tmp_path / "scaled.jsonl"
    assert cli.main(["sample", "--plan", str(plan_path), "--vocab", str(vocab_file),
                     "--mode", "multivar", "--count", "10", "--seed", "3",
                     "--match-token-norm", "--out", str(out)]) == 0
    norms = {round(float(np.linalg.norm(p.vector)), 9) for p in read_identities(out)}
    assert len(norms) == 1  # every vector rescaled to the same pool norm


def test_sample_deterministic_for_seed(tmp_path, vocab_file):
    plan_path = tmp_path / "plan.json"
    cli.main(["plan", "--vocab", str(vocab_file), "--n", "2", "--strategy", "rarest", "--seed", "1",
              "--out", str(plan_path)])
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert cli.main(["sample", "--plan", str(plan_path), "--vocab", str(vocab_file),
                         "--mode", "multivar", "--count", "25", "--seed", "9", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_env_default(tmp_path, vocab_file, monkeypatch):
    plan_path = tmp_path / "plan.json"
    cli.main(["plan", "--vocab", str(vocab_file), "--n", "2", "--strategy", "rarest", "--seed", "1",
              "--out", str(plan_path)])
    monkeypatch.setenv("STYLEKIT_SEED", "9")
    env_out = tmp_path / "env.jsonl"
    assert cli.main(["sample", "--plan", str(plan_path), "--vocab", str(vocab_file),
                     "--mode", "univar", "--count", "5", "--out", str(env_out)]) == 0
    explicit_out = tmp_path / "explicit.jsonl"
    assert cli.main(["sample", "--plan", str(plan_path), "--vocab", str(vocab_file),
                     "--mode", "univar", "--count", "5", "--seed", "9", "--out", str(explicit_out)]) == 0
    assert env_out.read_bytes() == explicit_out.read_bytes()


def test_metrics_command(tmp_path, rng):
    gen_path, refs_path = image_set_files(tmp_path, rng)
    out = tmp_path / "metrics.json"
    assert cli.main(["metrics", "--gen", str(gen_path), "--refs", str(refs_path), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {"fidelity", "diversity", "n", "m", "space"}
    assert doc["n"] == 8 and doc["m"] == 3
    assert 0.0 <= doc["fidelity"] <= 1.0


def test_filter_command_with_csv(tmp_path, rng):
    gen_path, refs_path = image_set_files(tmp_path, rng)
    out, csv_out = tmp_path / "filter.json", tmp_path / "filter.csv"
    code = cli.main(["filter", "--gen", str(gen_path), "--refs", str(refs_path),
                     "--copy-threshold", "0.99", "--defective-threshold", "0.05",
                     "--out", str(out), "--csv", str(csv_out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["statuses"]) == 8
    assert csv_out.read_text().startswith("image_id,status,")


def test_filter_histogram_mode(tmp_path, rng, capsys):
    gen_path, refs_path = image_set_files(tmp_path, rng)
    assert cli.main(["filter", "--gen", str(gen_path), "--refs", str(refs_path), "--histogram"]) == 0
    out = capsys.readouterr().out
    assert "nearest_ref_sim" in out and "per_image_fidelity" in out


def test_rank_command(tmp_path):
    comp = tmp_path / "comparisons.csv"
    rows = ["participant_id,dataset,method_a,method_b,outcome"]
    for ds in ("virus", "scary"):
        rows += [f"p,{ds},A,B,a"] * 2 + [f"p,{ds},A,B,b"] + [f"p,{ds},B,A,a"]
    comp.write_text("\n".join(rows) + "\n")
    out = tmp_path / "ranks.md"
    assert cli.main(["rank", "--comparisons", str(comp), "--out", str(out)]) == 0
    text = out.read_text()
    assert "| Method | virus | scary | Global |" in text
    json_out = tmp_path / "ranks.json"
    assert cli.main(["rank", "--comparisons", str(comp), "--format", "json", "--out", str(json_out)]) == 0
    json.loads(json_out.read_text())


def _build_run_artifacts(tmp_path, rng, trainings, dataset="synth"):
    gen_path, refs_path = image_set_files(tmp_path, rng, n_gen=10)
    artifacts = tmp_path / "artifacts"
    artifacts.mkdir()
    rows = ["dataset_id,training_method,generation_method,copy_index,image_set_ref"]
    for training in trainings:
        for gen_method in ("Token", "Univar", "Multivar"):
            for copy_index in (1, 2):
                stem = f"{dataset}__{training}__{gen_method}__{copy_index}"
                assert cli.main(["filter", "--gen", str(gen_path), "--refs", str(refs_path),
                                 "--copy-threshold", "0.99", "--defective-threshold", "0.05",
                                 "--out", str(artifacts / f"{stem}.filter.json")]) == 0
                assert cli.main(["metrics", "--gen", str(gen_path), "--refs", str(refs_path),
                                 "--out", str(artifacts / f"{stem}.metrics.json")]) == 0
                rows.append(f"{dataset},{training},{gen_method},{copy_index},gen.json")
    runs = tmp_path / "runs.csv"
    runs.write_text("\n".join(rows) + "\n")
    return runs, artifacts


def test_report_command(tmp_path, rng):
    runs, artifacts = _build_run_artifacts(tmp_path, rng, ["DB_L", "DB_MTC_L"])
    out = tmp_path / "report.md"
    assert cli.main(["report", "--runs", str(runs), "--artifacts", str(artifacts), "--out", str(out)]) == 0
    text = out.read_text()
    assert "Invalid images by category" in text
    assert "Fidelity and Diversity" in text
    assert "DB_MTC_L" in text


def test_ablate_command_restricts_variants(tmp_path, rng):
    runs, artifacts = _build_run_artifacts(tmp_path, rng, ["TI", "DB_L", "DB_MTC_Reg", "DB_noReg", "DB_MTC_L"])
    out = tmp_path / "ablation.md"
    assert cli.main(["ablate", "--runs", str(runs), "--artifacts", str(artifacts), "--out", str(out)]) == 0
    text = out.read_text()
    assert "DB_noReg" in text and "DB_MTC_Reg" in text
    assert "TI" not in text.replace("Training", "")  # ablation matrix drops TI


def test_unknown_flag_exits_1(tmp_path, vocab_file):
    assert cli.main(["plan", "--vocab", str(vocab_file), "--n", "2", "--out",
                     str(tmp_path / "p.json"), "--bogus"]) == 1


def test_missing_input_exits_1(tmp_path):
    assert cli.main(["plan", "--vocab", str(tmp_path / "absent.json"), "--n", "2",
                     "--out", str(tmp_path / "p.json")]) == 1


def test_validation_error_exits_1(tmp_path, vocab_file):
    # more characters than the vocabulary can cover
    assert cli.main(["plan", "--vocab", str(vocab_file), "--n", "40", "--out",
                     str(tmp_path / "p.json")]) == 1


def test_internal_error_exits_2(tmp_path, vocab_file, monkeypatch):
    def boom(path):
        raise RuntimeError("wires crossed")

    monkeypatch.setattr(cli.store, "load_vocabulary", boom)
    assert cli.main(["plan", "--vocab", str(vocab_file), "--n", "2",
                     "--out", str(tmp_path / "p.json")]) == 2


def test_console_script_wiring(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stylekit.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "plan" in proc.stdout and "ablate" in proc.stdout
