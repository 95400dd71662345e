"""End-to-end command-line runs against real files."""

from __future__ import annotations

import json
import os

import pytest

from routinesig.cli import main
from routinesig.ingest import DAILY_HEADER


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """synth -> ingest -> fit -> analyze in one shared directory tree."""
    root = tmp_path_factory.mktemp("chain")
    synth_dir, out_dir = str(root / "synth"), str(root / "out")
    assert main(["synth", "--out-dir", synth_dir, "--seed", "5",
                 "--participants", "8", "--days", "20", "--k", "2",
                 "--separation", "2.5"]) == 0
    assert main(["ingest", "--out-dir", out_dir, "--daily",
                 os.path.join(synth_dir, "daily.csv")]) == 0
    assert main(["fit", "--out-dir", out_dir, "--seed", "5", "--pin-k", "2",
                 "--structure", "full", "--n-restarts", "1",
                 "--dataset", os.path.join(out_dir, "dataset.csv")]) == 0
    assert main(["analyze", "--out-dir", out_dir, "--seed", "5",
                 "--dataset", os.path.join(out_dir, "dataset.csv"),
                 "--model", os.path.join(out_dir, "model.json"),
                 "--profiles", os.path.join(synth_dir, "profiles.csv"),
                 "--segment-days", "8,4", "--metrics", "jsd,cosine"]) == 0
    return synth_dir, out_dir


def test_chain_writes_expected_files(chain):
    synth_dir, out_dir = chain
    for name in ("daily.csv", "profiles.csv", "ground_truth.json"):
        assert os.path.exists(os.path.join(synth_dir, name))
    for name in ("dataset.csv", "audit.json", "model.json",
                 "signatures.csv", "persistence.csv", "transitions.csv",
                 "cluster_summary.csv", "paired_tests.json", "summary.json",
                 "regressions.json", "run_config.json",
                 "fig_centroids.svg", "fig_cluster_days.svg",
                 "fig_weekday_weekend.svg", "fig_transitions.svg",
                 "fig_rank_curves.svg"):
        assert os.path.exists(os.path.join(out_dir, name)), name


def test_chain_audit_and_model_content(chain):
    _, out_dir = chain
    audit = json.loads(read(os.path.join(out_dir, "audit.json")))
    assert audit["participants_out"] == 8
    assert audit["dropped_endpoint_days"] == 16    # 2 per participant
    model = json.loads(read(os.path.join(out_dir, "model.json")))
    assert model["format"] == "routinesig-model"
    assert model["k"] == 2 and model["structure"] == "full"


def test_chain_export_headers(chain):
    _, out_dir = chain
    def header_of(name):
        for line in read(os.path.join(out_dir, name)).decode().splitlines():
            if not line.startswith("#"):
                return line
        return ""
    assert header_of("signatures.csv") == \
        "participant_id,segment_id,rank,cluster_id,count,proportion"
    assert header_of("persistence.csv") == \
        "participant_id,variant,metric,d_self,d_ref,n_reference_peers"
    assert header_of("transitions.csv") == \
        "participant_id,segment_id,from_cluster,to_cluster,count,probability"
    assert header_of("cluster_summary.csv").startswith(
        "cluster_id,n_days,share,n_weekday,n_weekend,weekday_share,weekend_share,"
        "centroid_mob_daily")


def test_reingest_own_output_is_byte_stable(chain, tmp_path):
    _, out_dir = chain
    second = str(tmp_path / "again")
    assert main(["ingest", "--out-dir", second,
                 "--daily", os.path.join(out_dir, "dataset.csv")]) == 0
    assert read(os.path.join(second, "dataset.csv")) == \
        read(os.path.join(out_dir, "dataset.csv"))


def test_report_rerenders_identical_figures(chain):
    _, out_dir = chain
    figures = ["fig_centroids.svg", "fig_cluster_days.svg",
               "fig_weekday_weekend.svg", "fig_transitions.svg",
               "fig_rank_curves.svg"]
    before = {name: read(os.path.join(out_dir, name)) for name in figures}
    for name in figures:
        os.remove(os.path.join(out_dir, name))
    assert main(["report", "--out-dir", out_dir]) == 0
    for name in figures:
        assert read(os.path.join(out_dir, name)) == before[name], name


def test_sweep_command(chain, tmp_path):
    _, out_dir = chain
    sweep_dir = str(tmp_path / "sweep")
    assert main(["sweep", "--out-dir", sweep_dir, "--seed", "5",
                 "--dataset", os.path.join(out_dir, "dataset.csv"),
                 "--k-min", "1", "--k-max", "3",
                 "--structures", "diagonal,spherical", "--n-restarts", "1"]) == 0
    text = read(os.path.join(sweep_dir, "sweep.csv")).decode()
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    assert lines[0] == "k,structure,bic,loglik,n_params,mean_bhattacharyya,converged,error"
    assert len(lines) == 1 + 6    # 3 ks x 2 structures
    assert os.path.exists(os.path.join(sweep_dir, "model.json"))


def test_missing_input_file_is_exit_2(tmp_path):
    assert main(["ingest", "--out-dir", str(tmp_path / "o"),
                 "--daily", str(tmp_path / "nope.csv")]) == 2


def test_bad_header_is_exit_2(tmp_path):
    bad = tmp_path / "daily.csv"
    bad.write_text("participant_id,when\np1,2024-01-01\n")
    assert main(["ingest", "--out-dir", str(tmp_path / "o"),
                 "--daily", str(bad)]) == 2


def test_conflicting_ingest_inputs_is_exit_2(tmp_path, chain):
    synth_dir, _ = chain
    daily = os.path.join(synth_dir, "daily.csv")
    assert main(["ingest", "--out-dir", str(tmp_path / "o"),
                 "--daily", daily, "--lock", daily]) == 2


def test_impossible_sweep_is_exit_3(chain, tmp_path):
    _, out_dir = chain
    assert main(["sweep", "--out-dir", str(tmp_path / "s"), "--seed", "5",
                 "--dataset", os.path.join(out_dir, "dataset.csv"),
                 "--k-min", "500", "--k-max", "500"]) == 3


def test_report_without_exports_is_exit_2(tmp_path):
    assert main(["report", "--out-dir", str(tmp_path / "empty")]) == 2


def test_config_file_and_flag_override(tmp_path):
    config = {"format": "routinesig-config", "version": 1, "seed": 11,
              "synth_participants": 4, "synth_days": 6, "synth_k": 2,
              "synth_separation": 1.5}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    d1 = str(tmp_path / "a")
    assert main(["synth", "--out-dir", d1, "--config", str(cfg_path)]) == 0
    truth = json.loads(read(os.path.join(d1, "ground_truth.json")))
    assert truth["spec"]["seed"] == 11
    assert truth["spec"]["n_participants"] == 4

    d2 = str(tmp_path / "b")
    assert main(["synth", "--out-dir", d2, "--config", str(cfg_path),
                 "--seed", "12"]) == 0
    truth2 = json.loads(read(os.path.join(d2, "ground_truth.json")))
    assert truth2["spec"]["seed"] == 12    # flag wins over file


def test_raw_sensor_ingest(tmp_path):
    lock = tmp_path / "lock.csv"
    accel = tmp_path / "accel.csv"
    screen = tmp_path / "screen.csv"
    lock_lines = ["participant_id,start,end"]
    accel_lines = ["participant_id,timestamp,ax,ay,az"]
    screen_lines = ["participant_id,start,end"]
    for day in range(1, 21):
        d = f"2024-01-{day:02d}"
        nxt = f"2024-01-{day + 1:02d}"
        lock_lines.append(f"p1,{d}T22:30:00,{nxt}T06:30:00")
        for hour in (1, 2, 7, 8, 13, 14, 19, 20):
            accel_lines.append(f"p1,{d}T{hour:02d}:00:00,0.{day},0.{hour},0.1")
        screen_lines.append(f"p1,{d}T09:00:00,{d}T{10 + day % 3}:45:00")
    lock.write_text("\n".join(lock_lines) + "\n")
    accel.write_text("\n".join(accel_lines) + "\n")
    screen.write_text("\n".join(screen_lines) + "\n")
    out = str(tmp_path / "out")
    assert main(["ingest", "--out-dir", out, "--lock", str(lock),
                 "--accel", str(accel), "--screen", str(screen),
                 "--group-key", "pilot"]) == 0
    audit = json.loads(read(os.path.join(out, "audit.json")))
    assert audit["participants_out"] == 1
    assert audit["rows_out"] >= 14
    dataset = read(os.path.join(out, "dataset.csv")).decode()
    assert ",pilot," in dataset


def test_multi_group_suffixed_outputs(tmp_path):
    g1, g2 = str(tmp_path / "g1"), str(tmp_path / "g2")
    for seed, gdir, key in ((21, g1, "y1"), (22, g2, "y2")):
        assert main(["synth", "--out-dir", gdir, "--seed", str(seed),
                     "--participants", "6", "--days", "18", "--k", "2",
                     "--separation", "2.0", "--group-key", key]) == 0
    # merge the two daily files into one multi-group input
    merged = tmp_path / "daily.csv"
    lines = []
    for i, gdir in enumerate((g1, g2)):
        text = read(os.path.join(gdir, "daily.csv")).decode().splitlines()
        body = [l for l in text if l and not l.startswith("#")]
        lines.extend(body if i == 0 else body[1:])
    merged.write_text("\n".join(lines) + "\n")

    out = str(tmp_path / "out")
    assert main(["ingest", "--out-dir", out, "--daily", str(merged)]) == 0
    assert main(["fit", "--out-dir", out, "--seed", "21", "--pin-k", "2",
                 "--structure", "full", "--n-restarts", "1",
                 "--dataset", os.path.join(out, "dataset.csv")]) == 0
    assert os.path.exists(os.path.join(out, "model_y1.json"))
    assert os.path.exists(os.path.join(out, "model_y2.json"))
    assert main(["analyze", "--out-dir", out, "--seed", "21",
                 "--dataset", os.path.join(out, "dataset.csv"),
                 "--model", os.path.join(out, "model.json"),
                 "--segment-days", "8,4", "--metrics", "jsd"]) == 0
    for sfx in ("_y1", "_y2"):
        for name in (f"signatures{sfx}.csv", f"summary{sfx}.json",
                     f"fig_centroids{sfx}.svg"):
            assert os.path.exists(os.path.join(out, name)), name
    regressions = json.loads(read(os.path.join(out, "regressions.json")))
    assert regressions["skipped"] == "no profiles file provided"
