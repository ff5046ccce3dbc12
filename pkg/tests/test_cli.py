"""End-to-end command-line flows, exit codes, config merging, and manifests."""

import json
import shlex

import pytest

from srpose import cli, coco, reports, resample

from conftest import (
    make_dataset,
    perfect_keypoint_results,
    square_person,
    write_image_dir,
    write_stub_adapter,
)


def eval_fixture(tmp_path):
    """Annotations + perfect results on disk, ready for scoring."""
    dataset = make_dataset(
        [
            coco.ImageRecord(id=1, width=64, height=56, file_name="1.png"),
            coco.ImageRecord(id=2, width=64, height=56, file_name="2.png"),
        ],
        [
            square_person(1, 1, 16.0, 14.0, 20.0),
            square_person(2, 1, 44.0, 40.0, 24.0),
            square_person(3, 2, 32.0, 28.0, 36.0),
        ],
    )
    ann_path = tmp_path / "annotations.json"
    coco.write_dataset(dataset, ann_path)
    results_path = tmp_path / "results.json"
    coco.write_results(perfect_keypoint_results(dataset), results_path)
    return dataset, ann_path, results_path


def manifest_at(path):
    return json.loads(path.read_text())


class TestDownsampleAndUpscale:
    def test_downsample_builds_half_scale_dataset(self, tmp_path, capsys):
        dataset, ann_path, _ = eval_fixture(tmp_path)
        images_dir = write_image_dir(tmp_path, dataset)
        out_dir = tmp_path / "lr"
        code = cli.main(
            [
                "downsample",
                "--annotations",
                str(ann_path),
                "--images",
                str(images_dir),
                "--out",
                str(out_dir),
                "--factor",
                "0.5",
            ]
        )
        assert code == 0
        assert "downsampled 2/2 images by 0.5" in capsys.readouterr().out
        lr = coco.parse_dataset(out_dir / "annotations.json")
        assert {(img.width, img.height) for img in lr.images} == {(32, 28)}
        raster = resample.load_image(out_dir / "images" / "1.png")
        assert (raster.width, raster.height) == (32, 28)
        manifest = manifest_at(out_dir / cli.MANIFEST_NAME)
        assert manifest["command"] == "downsample"
        assert manifest["config"]["factor"] == 0.5
        assert len(manifest["run_id"]) == 12

    def test_manifest_run_id_is_deterministic(self, tmp_path):
        dataset, ann_path, _ = eval_fixture(tmp_path)
        images_dir = write_image_dir(tmp_path, dataset)
        ids = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            cli.main(
                [
                    "downsample",
                    "--annotations",
                    str(ann_path),
                    "--images",
                    str(images_dir),
                    "--out",
                    str(out_dir),
                ]
            )
            ids.append(manifest_at(out_dir / cli.MANIFEST_NAME)["run_id"])
        assert ids[0] == ids[1]

        out_dir = tmp_path / "c"
        cli.main(
            [
                "downsample",
                "--annotations",
                str(ann_path),
                "--images",
                str(images_dir),
                "--out",
                str(out_dir),
                "--factor",
                "0.25",
            ]
        )
        assert manifest_at(out_dir / cli.MANIFEST_NAME)["run_id"] != ids[0]

    def test_upscale_builtin(self, tmp_path, capsys):
        dataset, _, _ = eval_fixture(tmp_path)
        images_dir = write_image_dir(tmp_path, dataset)
        out_dir = tmp_path / "up"
        code = cli.main(
            ["upscale", "--images", str(images_dir), "--out", str(out_dir), "--scale", "2"]
        )
        assert code == 0
        assert "upscaled 2 images x2" in capsys.readouterr().out
        raster = resample.load_image(out_dir / "1.png")
        assert (raster.width, raster.height) == (128, 112)
        manifest = manifest_at(out_dir / cli.MANIFEST_NAME)
        assert manifest["backends"]["upscaler"]["name"] == "builtin-bicubic"


class TestEval:
    def test_perfect_results_score_one(self, tmp_path, capsys):
        _, ann_path, results_path = eval_fixture(tmp_path)
        report_path = tmp_path / "report.json"
        table_path = tmp_path / "table.txt"
        code = cli.main(
            [
                "eval",
                "--annotations",
                str(ann_path),
                "--results",
                str(results_path),
                "--label",
                "perfect",
                "--report",
                str(report_path),
                "--table",
                str(table_path),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "perfect" in out and "1.000" in out
        loaded = reports.read_report_json(report_path)
        assert loaded.ap == 1.0 and loaded.ar == 1.0 and loaded.mode == "keypoint"
        assert table_path.read_text() == out
        manifest = manifest_at(tmp_path / "report.manifest.json")
        assert manifest["command"] == "eval"
        assert manifest["config"]["pinned"] is False

    def test_subgroup_breakdown_and_csv(self, tmp_path):
        _, ann_path, results_path = eval_fixture(tmp_path)
        report_path = tmp_path / "report.json"
        csv_path = tmp_path / "bins.csv"
        code = cli.main(
            [
                "eval",
                "--annotations",
                str(ann_path),
                "--results",
                str(results_path),
                "--report",
                str(report_path),
                "--subgroup-width",
                "500",
                "--csv",
                str(csv_path),
            ]
        )
        assert code == 0
        loaded = reports.read_report_json(report_path)
        # person areas 400, 576, 1296 -> bins 1, 2, 3
        assert loaded.subgroups[1] == 1.0
        assert loaded.subgroups[2] == 1.0
        assert loaded.subgroups[3] == 1.0
        assert loaded.subgroups[4] == -1.0
        assert len(csv_path.read_text().splitlines()) == 25

    def test_pinned_reference_sets_size_labels(self, tmp_path):
        _, ann_path, results_path = eval_fixture(tmp_path)
        report_path = tmp_path / "report.json"
        code = cli.main(
            [
                "eval",
                "--annotations",
                str(ann_path),
                "--results",
                str(results_path),
                "--pin-annotations",
                str(ann_path),
                "--report",
                str(report_path),
            ]
        )
        assert code == 0
        assert manifest_at(tmp_path / "report.manifest.json")["config"]["pinned"] is True

    def test_malformed_results_exit_data_error(self, tmp_path, capsys):
        _, ann_path, _ = eval_fixture(tmp_path)
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        code = cli.main(
            ["eval", "--annotations", str(ann_path), "--results", str(bad)]
        )
        assert code == cli.EXIT_DATA
        assert "data error" in capsys.readouterr().err

    def test_missing_required_flag_exits_usage(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["eval", "--results", "x.json"])
        assert exc.value.code == cli.EXIT_USAGE


class TestConfigMerging:
    def test_config_file_supplies_defaults(self, tmp_path, capsys):
        dataset, ann_path, _ = eval_fixture(tmp_path)
        images_dir = write_image_dir(tmp_path, dataset)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"factor": 0.25}))
        code = cli.main(
            [
                "downsample",
                "--annotations",
                str(ann_path),
                "--images",
                str(images_dir),
                "--out",
                str(tmp_path / "lr"),
                "--config",
                str(config),
            ]
        )
        assert code == 0
        assert "by 0.25" in capsys.readouterr().out

    def test_explicit_flags_beat_config(self, tmp_path, capsys):
        dataset, ann_path, _ = eval_fixture(tmp_path)
        images_dir = write_image_dir(tmp_path, dataset)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"factor": 0.25}))
        code = cli.main(
            [
                "downsample",
                "--annotations",
                str(ann_path),
                "--images",
                str(images_dir),
                "--out",
                str(tmp_path / "lr"),
                "--config",
                str(config),
                "--factor",
                "0.5",
            ]
        )
        assert code == 0
        assert "by 0.5" in capsys.readouterr().out

    def test_unknown_config_key_exits_usage(self, tmp_path, capsys):
        dataset, ann_path, _ = eval_fixture(tmp_path)
        images_dir = write_image_dir(tmp_path, dataset)
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus": 1}))
        code = cli.main(
            [
                "downsample",
                "--annotations",
                str(ann_path),
                "--images",
                str(images_dir),
                "--out",
                str(tmp_path / "lr"),
                "--config",
                str(config),
            ]
        )
        assert code == cli.EXIT_USAGE
        assert "bogus" in capsys.readouterr().err


def route_fixture(tmp_path, scenario_extra=None):
    """Original images + a scripted adapter detecting on the 2x SR frame."""
    dataset = make_dataset(
        [
            coco.ImageRecord(id=1, width=40, height=30, file_name="1.png"),
            coco.ImageRecord(id=2, width=40, height=30, file_name="2.png"),
        ],
        [
            square_person(1, 1, 7.0, 7.0, 10.0),  # bbox (2, 2, 10, 10)
            square_person(2, 1, 11.0, 9.0, 12.0),  # bbox (5, 3, 12, 12)
            square_person(3, 2, 10.0, 10.0, 20.0),  # bbox (0, 0, 20, 20)
        ],
    )
    ann_path = tmp_path / "annotations.json"
    coco.write_dataset(dataset, ann_path)
    images_dir = write_image_dir(tmp_path, dataset)
    scenario = {
        "detections": {
            "1": [
                {"bbox": [4.0, 4.0, 20.0, 20.0], "area": 360.0, "score": 0.9},
                {"bbox": [10.0, 6.0, 24.0, 24.0], "area": 444.0, "score": 0.8},
            ],
            "2": [{"bbox": [0.0, 0.0, 40.0, 40.0], "area": 400.0, "score": 0.7}],
        }
    }
    if scenario_extra:
        scenario.update(scenario_extra)
    command = shlex.join(write_stub_adapter(tmp_path / "bin", scenario))
    return ann_path, images_dir, command


class TestRoute:
    def route_args(self, ann_path, images_dir, command, out_dir):
        return [
            "route",
            "--annotations",
            str(ann_path),
            "--images",
            str(images_dir),
            "--out",
            str(out_dir),
            "--scale",
            "2",
            "--threshold",
            "100",
            "--detect-backend",
            command,
            "--keypoint-backend",
            command,
            "--workers",
            "1",
        ]

    def test_routed_run_scores_perfectly(self, tmp_path, capsys):
        ann_path, images_dir, command = route_fixture(tmp_path)
        out_dir = tmp_path / "out"
        code = cli.main(self.route_args(ann_path, images_dir, command, out_dir))
        assert code == 0
        out = capsys.readouterr().out
        assert "routed 3 detections (2 sr, 1 original), 0 image failures" in out

        from srpose import router

        decisions = router.read_ledger(out_dir / "decisions.jsonl")
        assert [d.branch for d in decisions] == ["sr", "original", "sr"]
        assert decisions[1].bbox == (5.0, 3.0, 12.0, 12.0)

        report = reports.read_report_json(out_dir / "report.json")
        assert report.ap == 1.0 and report.ar == 1.0

        manifest = manifest_at(out_dir / cli.MANIFEST_NAME)
        assert manifest["config"] == {"scale": 2, "threshold": 100.0, "eval": True}
        assert manifest["backends"]["upscaler"]["name"] == "builtin-bicubic"
        assert manifest["backends"]["detector"]["name"] == "python3"

        records = coco.parse_results(out_dir / "results.json")
        assert len(records) == 3

    def test_no_eval_skips_report(self, tmp_path):
        ann_path, images_dir, command = route_fixture(tmp_path)
        out_dir = tmp_path / "out"
        code = cli.main(
            self.route_args(ann_path, images_dir, command, out_dir) + ["--no-eval"]
        )
        assert code == 0
        assert not (out_dir / "report.json").exists()
        assert (out_dir / "results.json").exists()

    def test_infinite_threshold_routes_everything_to_sr(self, tmp_path, capsys):
        ann_path, images_dir, command = route_fixture(tmp_path)
        args = self.route_args(ann_path, images_dir, command, tmp_path / "out")
        args[args.index("--threshold") + 1] = "inf"
        assert cli.main(args) == 0
        assert "(3 sr, 0 original)" in capsys.readouterr().out

    def test_backend_failure_exits_backend_code(self, tmp_path, capsys):
        ann_path, images_dir, command = route_fixture(
            tmp_path, {"fail_task": "detect"}
        )
        code = cli.main(
            self.route_args(ann_path, images_dir, command, tmp_path / "out")
        )
        assert code == cli.EXIT_BACKEND
        assert "backend error" in capsys.readouterr().err

    def test_bad_threshold_exits_usage(self, tmp_path):
        ann_path, images_dir, command = route_fixture(tmp_path)
        args = self.route_args(ann_path, images_dir, command, tmp_path / "out")
        args[args.index("--threshold") + 1] = "abc"
        with pytest.raises(SystemExit) as exc:
            cli.main(args)
        assert exc.value.code == cli.EXIT_USAGE


class TestSubgroupsCommand:
    def test_two_run_comparison_csv(self, tmp_path):
        dataset, ann_path, results_path = eval_fixture(tmp_path)
        # baseline drops the person in bin 3
        baseline_records = [
            rec
            for rec in perfect_keypoint_results(dataset)
            if rec.image_id != 2
        ]
        baseline_path = tmp_path / "baseline.json"
        coco.write_results(baseline_records, baseline_path)
        csv_path = tmp_path / "compare.csv"
        code = cli.main(
            [
                "subgroups",
                "--reference",
                str(ann_path),
                "--baseline-annotations",
                str(ann_path),
                "--baseline-results",
                str(baseline_path),
                "--treated-results",
                str(results_path),
                "--csv",
                str(csv_path),
            ]
        )
        assert code == 0
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 25
        bin3 = lines[3].split(",")
        assert bin3[3] == "0.000000" and bin3[4] == "1.000000"
        assert (tmp_path / "compare.manifest.json").exists()


class TestReportCommand:
    def write_report(self, directory, name):
        directory.mkdir(parents=True, exist_ok=True)
        _, ann_path, results_path = eval_fixture(directory)
        report_path = directory / name
        cli.main(
            [
                "eval",
                "--annotations",
                str(ann_path),
                "--results",
                str(results_path),
                "--report",
                str(report_path),
            ]
        )
        return report_path

    def test_merges_rows(self, tmp_path, capsys):
        a = self.write_report(tmp_path / "a", "a.json")
        b = self.write_report(tmp_path / "b", "b.json")
        capsys.readouterr()  # drop the eval tables printed while building fixtures
        out_path = tmp_path / "table.txt"
        code = cli.main(
            ["report", "--add", f"half={a}", "--add", f"quarter={b}", "--out", str(out_path)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert out.splitlines()[2].startswith("half")
        assert out.splitlines()[3].startswith("quarter")
        assert out_path.read_text() == out

    def test_bad_add_syntax_exits_usage(self, tmp_path, capsys):
        code = cli.main(["report", "--add", "no-equals-sign"])
        assert code == cli.EXIT_USAGE
        assert "LABEL=PATH" in capsys.readouterr().err
