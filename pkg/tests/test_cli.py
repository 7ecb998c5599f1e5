import csv
import json

import pytest
import yaml

from sddp_tsto.cli import main


def _generate(tmp_path, *extra):
    instance = tmp_path / "instance.json"
    args = [
        "generate",
        "--instance.n",
        "2",
        "--instance.t_max",
        "3",
        "--instance.m_realizations",
        "2",
        "--instance.seed",
        "5",
        "--instance_out",
        str(instance),
        "--log_dir",
        str(tmp_path / "logs"),
        *extra,
    ]
    return main(args), instance


def _train(tmp_path, mode, instance, max_iters=8):
    policy = tmp_path / f"policy_{mode}.json"
    results = tmp_path / f"results_{mode}.json"
    code = main(
        [
            "train",
            "--instance_in",
            str(instance),
            "--mode",
            mode,
            "--run.n_window",
            "4",
            "--run.max_iters",
            str(max_iters),
            "--run.seed",
            "2",
            "--run.id",
            f"test_{mode}",
            "--run.log_dir",
            str(tmp_path / "logs"),
            "--policy_out",
            str(policy),
            "--results_out",
            str(results),
            "--progress",
            "false",
        ]
    )
    return code, policy, results


def test_usage_and_unknown_commands(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().out
    assert main(["--help"]) == 0
    assert main(["solve"]) == 2


def test_invalid_instance_parameters_exit_with_config_error(tmp_path):
    code, instance = _generate(tmp_path, "--instance.n", "3")
    assert code == 2
    assert not instance.exists()


def test_missing_instance_file(tmp_path):
    code, _, _ = _train(tmp_path, "tsto", tmp_path / "nope.json")
    assert code == 2


@pytest.mark.entry
def test_generate_train_compare_report(tmp_path):
    code, instance = _generate(tmp_path)
    assert code == 0
    doc = json.loads(instance.read_text())
    assert doc["n"] == 2
    assert doc["generator"]["seed"] == 5

    code, policy_tsto, results_tsto = _train(tmp_path, "tsto", instance)
    assert code == 0
    code, policy_fixed, results_fixed = _train(tmp_path, "fixed", instance)
    assert code == 0

    results = json.loads(results_tsto.read_text())
    assert results["label"] == "sddp_tsto"
    assert results["iterations"] <= 8
    assert json.loads(policy_fixed.read_text())["label"] == "sddp_fixed_horizon"

    csv_out = tmp_path / "comparison.csv"
    summary_out = tmp_path / "summary.json"
    code = main(
        [
            "compare",
            "--instance_in",
            str(instance),
            "--policy_a",
            str(policy_tsto),
            "--policy_b",
            str(policy_fixed),
            "--n_sims",
            "20",
            "--csv_out",
            str(csv_out),
            "--summary_out",
            str(summary_out),
            "--log_dir",
            str(tmp_path / "logs"),
        ]
    )
    assert code == 0
    with open(csv_out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["id", "T", "income_a", "income_b", "diff", "ratio"]
    assert len(rows) == 21
    summary = json.loads(summary_out.read_text())
    assert summary["labels"] == ["sddp_tsto", "sddp_fixed_horizon"]
    assert summary["instance"]["n"] == 2

    report_out = tmp_path / "report.json"
    report_config = tmp_path / "report.yaml"
    report_doc = {
        "summaries": [str(summary_out)],
        "results": [str(results_tsto), str(results_fixed)],
        "out": str(report_out),
    }
    report_config.write_text(yaml.safe_dump(report_doc))
    code = main(["report", "--config_path", str(report_config)])
    assert code == 0
    report = json.loads(report_out.read_text())
    assert len(report["comparisons"]) == 1
    assert len(report["training"]) == 2
    assert (tmp_path / "report.csv").exists()


@pytest.mark.entry
def test_reruns_write_identical_files(tmp_path):
    first_dir, second_dir = tmp_path / "a", tmp_path / "b"
    first_dir.mkdir()
    second_dir.mkdir()

    outputs = []
    for work in (first_dir, second_dir):
        code, instance = _generate(work)
        assert code == 0
        code, policy, results = _train(work, "tsto", instance, max_iters=5)
        assert code == 0
        doc = json.loads(results.read_text())
        assert doc.pop("wall_time") >= 0.0
        outputs.append((instance.read_bytes(), policy.read_bytes(), doc))

    assert outputs[0] == outputs[1]


@pytest.mark.entry
def test_mismatched_policy_is_rejected(tmp_path):
    code, instance = _generate(tmp_path)
    assert code == 0
    code, policy, _ = _train(tmp_path, "tsto", instance, max_iters=2)
    assert code == 0

    other_dir = tmp_path / "other"
    other_dir.mkdir()
    code, other_instance = _generate(other_dir, "--instance.n", "4")
    assert code == 0
    code = main(
        [
            "compare",
            "--instance_in",
            str(other_instance),
            "--policy_a",
            str(policy),
            "--policy_b",
            str(policy),
            "--n_sims",
            "5",
            "--log_dir",
            str(tmp_path / "logs"),
        ]
    )
    assert code == 2
