import json
import re
from pathlib import Path

import pytest

from anchorprune import (
    AnchorConfiguration,
    frontier_from_entries,
    FrontierEntry,
    export_frontier,
    head_to_json,
    ssd300_head,
    synth_spec_to_dict,
)
from anchorprune.cli import cli

from conftest import oracle_synth_spec


@pytest.fixture
def ssd_head_file(tmp_path):
    path = tmp_path / "ssd300.json"
    path.write_text(head_to_json(ssd300_head()))
    return path


@pytest.fixture
def instance(tmp_path):
    """Synthetic head/gt/dets written through the synth subcommand."""
    spec_path = tmp_path / "synth.json"
    spec_path.write_text(json.dumps(synth_spec_to_dict(oracle_synth_spec(5, num_images=10))))
    out = tmp_path / "instance"
    assert cli(["synth", "--spec", str(spec_path), "--out-dir", str(out)]) == 0
    return {
        "spec": spec_path,
        "head": out / "head.json",
        "gt": out / "gt.json",
        "dets": out / "dets.jsonl",
        "dir": out,
    }


def bound_args(instance):
    return [
        "--head", str(instance["head"]),
        "--gt", str(instance["gt"]),
        "--dets", str(instance["dets"]),
    ]


def read_tree(directory: Path, skip_manifest=True) -> dict[str, bytes]:
    out = {}
    for path in sorted(directory.rglob("*")):
        if path.is_file() and not (skip_manifest and path.name == "manifest.json"):
            out[str(path.relative_to(directory))] = path.read_bytes()
    return out


class TestCost:
    def test_ssd300_full(self, ssd_head_file, capsys):
        assert cli(["cost", "--head", str(ssd_head_file), "--config", "full"]) == 0
        output = capsys.readouterr().out
        assert "bbox_count: 8732" in output
        assert "4231M" in output
        assert "4231319040" in output

    def test_hex_config(self, ssd_head_file, capsys):
        assert cli(["cost", "--head", str(ssd_head_file), "--config", "00000000"]) == 0
        output = capsys.readouterr().out
        assert "bbox_count: 0" in output


class TestValidate:
    def test_valid_instance(self, instance, capsys):
        assert cli(["validate", *bound_args(instance)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["images"] == 10
        assert doc["records"] > 0

    def test_binding_error_exits_one(self, instance, tmp_path, capsys):
        other_head = tmp_path / "other.json"
        other_head.write_text(head_to_json(ssd300_head()))
        code = cli([
            "validate", "--head", str(other_head),
            "--gt", str(instance["gt"]), "--dets", str(instance["dets"]),
        ])
        assert code == 1
        assert "bound to head" in capsys.readouterr().err

    def test_missing_file_exits_one(self, instance, capsys):
        code = cli([
            "validate", "--head", "/nonexistent.json",
            "--gt", str(instance["gt"]), "--dets", str(instance["dets"]),
        ])
        assert code == 1

    def test_usage_error_exits_one(self, capsys):
        assert cli(["validate"]) == 1


class TestEval:
    def test_full_config(self, instance, capsys):
        assert cli(["eval", *bound_args(instance), "--metric", "voc50"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert 0.0 <= doc["map"] <= 1.0
        assert doc["map"] == doc["ap50"]
        assert doc["ap75"] == -1  # not evaluated under voc50

    def test_out_dir_writes_manifest(self, instance, tmp_path, capsys):
        out = tmp_path / "evalout"
        assert cli(["eval", *bound_args(instance), "--out-dir", str(out)]) == 0
        assert (out / "eval.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["tool"] == "anchorprune"
        assert set(manifest["inputs"]) == {str(instance[k]) for k in ("head", "gt", "dets")}


class TestSearchCli:
    def run_search(self, instance, out, threads="1"):
        return cli([
            "search", *bound_args(instance), "--metric", "voc50",
            "--resource", "bboxes", "--theta", "0", "--threads", threads,
            "--out-dir", str(out),
        ])

    def test_outputs_and_determinism(self, instance, tmp_path):
        out1, out2, out8 = (tmp_path / n for n in ("s1", "s2", "s8"))
        assert self.run_search(instance, out1) == 0
        assert self.run_search(instance, out2) == 0
        assert self.run_search(instance, out8, threads="8") == 0
        tree = read_tree(out1)
        assert set(tree) == {"frontier.json", "frontier.csv"}
        assert tree == read_tree(out2) == read_tree(out8)
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        m1.pop("created_utc"), m2.pop("created_utc")
        m1["params"].pop("threads"), m2["params"].pop("threads")
        assert m1 == m2

    def test_frontier_parses_back(self, instance, tmp_path):
        out = tmp_path / "sf"
        assert self.run_search(instance, out) == 0
        doc = json.loads((out / "frontier.json").read_text())
        assert doc["format"] == "anchor-frontier/v1"
        assert len(doc["entries"]) >= 1


class TestOracleCli:
    def test_oracle_runs(self, instance, tmp_path, capsys):
        out = tmp_path / "oracle"
        code = cli([
            "oracle", *bound_args(instance), "--metric", "voc50",
            "--resource", "bboxes", "--out-dir", str(out),
        ])
        assert code == 0
        assert (out / "frontier.json").exists()


class TestBaselineCli:
    def test_random_deterministic(self, instance, tmp_path):
        outs = [tmp_path / n for n in ("b1", "b2")]
        for out in outs:
            code = cli([
                "baseline", "random", *bound_args(instance), "--metric", "voc50",
                "--resource", "bboxes", "--seed", "9", "--out-dir", str(out),
            ])
            assert code == 0
        assert read_tree(outs[0]) == read_tree(outs[1])
        doc = json.loads((outs[0] / "trajectory.json").read_text())
        assert len(doc["points"]) == 10

    def test_layerwise(self, instance, tmp_path):
        out = tmp_path / "lw"
        code = cli([
            "baseline", "layerwise", *bound_args(instance), "--metric", "voc50",
            "--resource", "bboxes", "--target", "1", "--out-dir", str(out),
        ])
        assert code == 0
        doc = json.loads((out / "layerwise.json").read_text())
        layers = {layer for layer, _ in doc["kept"]}
        assert all(
            sum(1 for l, _ in doc["kept"] if l == layer) == 1 for layer in layers
        )


class TestPlots:
    def test_frontier_structure(self, instance, tmp_path):
        from anchorprune import head_from_json

        head = head_from_json(instance["head"].read_text())
        ids = head.anchor_ids
        c1 = AnchorConfiguration(head, frozenset(ids[:3]))
        c2 = AnchorConfiguration(head, frozenset(ids))
        frontier = frontier_from_entries(
            [FrontierEntry(c1, 0.4, 100, None), FrontierEntry(c2, 0.8, 400, None)]
        )
        frontier_path = tmp_path / "frontier.json"
        frontier_path.write_bytes(export_frontier(frontier, "json"))
        out = tmp_path / "plots" / "frontier.svg"
        code = cli([
            "plot", "frontier", "--head", str(instance["head"]),
            "--frontier", str(frontier_path), "--out", str(out),
        ])
        assert code == 0
        svg = out.read_text()
        assert svg.count('class="frontier-marker"') == 2
        path_d = re.search(r'class="staircase" d="([^"]+)"', svg).group(1)
        assert path_d.count("H") == 2  # one step between entries plus the tail
        assert path_d.count("V") == 1

    def test_shapes_plot(self, instance, tmp_path):
        out = tmp_path / "shapes.svg"
        code = cli(["plot", "shapes", *bound_args(instance), "--out", str(out)])
        assert code == 0
        svg = out.read_text()
        assert svg.count('class="anchor-panel"') == 10

    def test_plot_frontier_requires_frontier(self, instance, tmp_path):
        code = cli([
            "plot", "frontier", "--head", str(instance["head"]),
            "--out", str(tmp_path / "x.svg"),
        ])
        assert code == 1


class TestOveranchorize:
    def test_emits_dense_head(self, ssd_head_file, tmp_path, capsys):
        out = tmp_path / "dense.json"
        scales = ";".join(
            f"{s},{(s * s2) ** 0.5:.6f}"
            for s, s2 in zip((30, 60, 111, 162, 213, 264), (60, 111, 162, 213, 264, 315))
        )
        code = cli([
            "overanchorize", "--head", str(ssd_head_file),
            "--scales", scales, "--ratios", "1,2,0.5,3",
            "--out", str(out),
        ])
        assert code == 0
        assert "anchors: 48" in capsys.readouterr().out
        assert cli(["cost", "--head", str(out), "--config", "full"]) == 0

    def test_asymmetric_ratio_sets_box_count(self, ssd_head_file, tmp_path, capsys):
        out = tmp_path / "dense48.json"
        scales = ";".join(
            f"{s},{(s * s2) ** 0.5:.6f}"
            for s, s2 in zip((30, 60, 111, 162, 213, 264), (60, 111, 162, 213, 264, 315))
        )
        narrow, wide = "1,2,0.5", "1,2,0.5,3,0.3333333333333333"
        code = cli([
            "overanchorize", "--head", str(ssd_head_file),
            "--scales", scales,
            "--ratios", ";".join([narrow, wide, wide, wide, narrow, narrow]),
            "--out", str(out),
        ])
        assert code == 0
        assert "bbox_count: 13584" in capsys.readouterr().out


class TestExitCodes:
    def test_internal_error_exits_two(self, instance, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("file, not a directory")
        code = cli([
            "search", *bound_args(instance), "--metric", "voc50",
            "--resource", "bboxes", "--out-dir", str(blocker / "nested"),
        ])
        assert code == 2
