import openpyxl
import pytest

from demest.formats import read_dem, read_shots, write_dem, write_shots
from demest.histories import DetectorHistories
from main import main


def _run(*argv: str) -> int:
    return main([*argv, "--no-progress", "--log-level", "WARNING"])


@pytest.fixture
def r2_files(tmp_path, r2_dem, r2_data):
    dem_path = tmp_path / "r2.dem"
    shots_path = tmp_path / "r2.shots"
    write_dem(r2_dem, dem_path)
    write_shots(r2_data.take(range(50_000)), shots_path, "bin")
    return dem_path, shots_path


class TestGen:
    def test_uniform(self, tmp_path):
        out = tmp_path / "u.dem"
        assert _run("gen", "--n", "3", "--uniform-eps", "0.08", "--out", str(out)) == 0
        dem = read_dem(out)
        assert len(dem) == 7
        assert all(ev.probability == pytest.approx(0.01) for ev in dem)

    def test_reproducible(self, tmp_path):
        a, b = tmp_path / "a.dem", tmp_path / "b.dem"
        args = ["gen", "--n", "20", "--events", "15", "--max-weight", "3", "--seed", "5"]
        assert _run(*args, "--out", str(a)) == 0
        assert _run(*args, "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(read_dem(a)) == 15

    def test_empty_dem(self, tmp_path):
        out = tmp_path / "e.dem"
        assert _run("gen", "--n", "60", "--events", "0", "--out", str(out)) == 0
        text = out.read_text()
        assert "detectors 60" in text
        assert "error(" not in text

    def test_infeasible_request(self, tmp_path):
        assert _run("gen", "--n", "3", "--events", "10", "--max-weight", "1", "--out", str(tmp_path / "x")) == 2

    def test_parser_errors(self):
        with pytest.raises(SystemExit) as info:
            main(["gen", "--n", "0"])
        assert info.value.code == 2
        with pytest.raises(SystemExit):
            main(["gen", "--n", "3", "--p-min", "0.2", "--p-max", "0.1"])
        with pytest.raises(SystemExit):
            main(["estimate", "--data", "x", "--method", "magic"])


class TestSample:
    def test_text_and_binary_agree(self, tmp_path, r2_files):
        dem_path, _ = r2_files
        txt, bin_ = tmp_path / "s.txt", tmp_path / "s.bin"
        assert _run("sample", "--dem", str(dem_path), "--shots", "1000", "--seed", "3", "--out", str(txt)) == 0
        assert _run(
            "sample", "--dem", str(dem_path), "--shots", "1000", "--seed", "3", "--format", "bin", "--out", str(bin_)
        ) == 0
        assert read_shots(txt) == read_shots(bin_)
        assert read_shots(txt).n_shots == 1000

    def test_empty_dem_gives_zero_rows(self, tmp_path):
        dem_path, out = tmp_path / "e.dem", tmp_path / "e.txt"
        dem_path.write_text("detectors 4\n")
        assert _run("sample", "--dem", str(dem_path), "--shots", "3", "--out", str(out)) == 0
        assert out.read_text() == "0000\n0000\n0000\n"

    def test_bad_dem(self, tmp_path):
        dem_path = tmp_path / "bad.dem"
        dem_path.write_text("detectors 2\nerror(2.0) D0\n")
        assert _run("sample", "--dem", str(dem_path), "--shots", "3", "--out", str(tmp_path / "o")) == 2


class TestEstimate:
    def test_exact_round_trip(self, tmp_path, r2_files):
        dem_path, shots_path = r2_files
        est_path = tmp_path / "est.dem"
        assert _run(
            "estimate", "--data", str(shots_path), "--method", "exact", "--bootstrap", "20", "--out", str(est_path)
        ) == 0
        text = est_path.read_text()
        assert text.startswith("# demest estimate method=exact")
        assert "# se=" in text
        assert _run("compare", "--true", str(dem_path), "--est", str(est_path), "--out", str(tmp_path / "r")) == 0

    def test_exact_divergent_data(self, tmp_path):
        shots = tmp_path / "d.txt"
        write_shots(DetectorHistories.from_strings(["10"] * 50 + ["01"] * 50), shots, "txt")
        assert _run("estimate", "--data", str(shots), "--out", str(tmp_path / "o")) == 3

    def test_exact_over_cap(self, tmp_path, r2_files):
        _, shots_path = r2_files
        assert _run("estimate", "--data", str(shots_path), "--max-detectors", "1", "--out", str(tmp_path / "o")) == 2

    def test_missing_data_file(self, tmp_path):
        assert _run("estimate", "--data", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")) == 2

    def test_pij(self, tmp_path, r2_files):
        _, shots_path = r2_files
        out = tmp_path / "pij.txt"
        assert _run("estimate", "--data", str(shots_path), "--method", "pij", "--out", str(out)) == 0
        lines = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "detectors 2"
        pair = next(ln for ln in lines if ln.startswith("p 0 1 "))
        assert float(pair.split()[3]) == pytest.approx(0.05, abs=0.005)

    @pytest.mark.parametrize("extra", [[], ["--recursive"]])
    def test_lowweight(self, tmp_path, r2_files, extra):
        dem_path, shots_path = r2_files
        out = tmp_path / "lw.dem"
        assert _run("estimate", "--data", str(shots_path), "--method", "lowweight", *extra, "--out", str(out)) == 0
        assert len(read_dem(out)) == 3

    def test_lattice_with_report(self, tmp_path, r2_files):
        dem_path, shots_path = r2_files
        out, report = tmp_path / "lat.dem", tmp_path / "lattice.txt"
        assert _run(
            "estimate", "--data", str(shots_path), "--method", "lattice",
            "--lattice-report", str(report), "--out", str(out),
        ) == 0
        assert report.read_text().startswith("# class lattice N=2 w_max=2")
        assert _run("compare", "--true", str(dem_path), "--est", str(out), "--out", str(tmp_path / "r")) == 0

    def test_total_method(self, tmp_path, r2_files):
        _, shots_path = r2_files
        out = tmp_path / "t.txt"
        assert _run("estimate", "--data", str(shots_path), "--method", "total", "--exhaustive", "--out", str(out)) == 0
        values = dict(ln.split("=", 1) for ln in out.read_text().splitlines() if not ln.startswith("#"))
        assert float(values["a0"]) == pytest.approx(0.8393, abs=0.02)
        assert values["divergent"] == "0"


class TestCompare:
    def test_exit_codes(self, tmp_path, r2_dem):
        truth, other, wide = tmp_path / "t.dem", tmp_path / "o.dem", tmp_path / "w.dem"
        write_dem(r2_dem, truth)
        other.write_text("detectors 2\nerror(0.1) D0\n")
        wide.write_text("detectors 3\n")
        assert _run("compare", "--true", str(truth), "--est", str(truth), "--out", str(tmp_path / "a")) == 0
        assert _run("compare", "--true", str(truth), "--est", str(other), "--out", str(tmp_path / "b")) == 1
        assert _run("compare", "--true", str(truth), "--est", str(wide), "--out", str(tmp_path / "c")) == 2

    def test_xlsx(self, tmp_path, r2_dem):
        truth, xlsx = tmp_path / "t.dem", tmp_path / "cmp.xlsx"
        write_dem(r2_dem, truth)
        assert _run(
            "compare", "--true", str(truth), "--est", str(truth), "--xlsx", str(xlsx), "--out", str(tmp_path / "r")
        ) == 0
        assert openpyxl.load_workbook(xlsx).sheetnames == ["Compare", "Summary"]

    def test_stdout(self, tmp_path, r2_dem, capsys):
        truth = tmp_path / "t.dem"
        write_dem(r2_dem, truth)
        assert _run("compare", "--true", str(truth), "--est", str(truth)) == 0
        assert "matched=3" in capsys.readouterr().out


class TestStats:
    def test_parities_and_covariance(self, tmp_path, r2_files):
        _, shots_path = r2_files
        out = tmp_path / "stats.txt"
        assert _run(
            "stats", "--data", str(shots_path), "--parity", "10", "--parity", "11",
            "--covariance", "--bootstrap", "10", "--out", str(out),
        ) == 0
        lines = out.read_text().splitlines()
        first = next(ln for ln in lines if ln.startswith("parity=10 "))
        fields = dict(tok.split("=", 1) for tok in first.split())
        assert float(fields["z"]) == pytest.approx(0.72, abs=0.01)
        assert "omega_bootstrap_se" in fields
        assert any(ln.startswith("cov 10 11 ") for ln in lines)

    def test_length_mismatch(self, tmp_path, r2_files):
        _, shots_path = r2_files
        assert _run("stats", "--data", str(shots_path), "--parity", "101", "--out", str(tmp_path / "o")) == 2

    def test_bootstrap_of_one_rejected(self, r2_files):
        _, shots_path = r2_files
        with pytest.raises(SystemExit):
            main(["stats", "--data", str(shots_path), "--parity", "10", "--bootstrap", "1"])


class TestTotalAttenuation:
    def test_sampled(self, tmp_path, r2_files):
        _, shots_path = r2_files
        out = tmp_path / "a0.txt"
        assert _run("total-attenuation", "--data", str(shots_path), "--mc-samples", "128", "--out", str(out)) == 0
        text = out.read_text()
        assert "a0=" in text
        assert "p_odd=" in text
        assert "# demest total-attenuation method=total" in text

    def test_partly_divergent_is_flagged(self, tmp_path):
        shots = tmp_path / "d.txt"
        write_shots(DetectorHistories.from_strings(["1"] * 50 + ["0"] * 50), shots, "txt")
        code = _run("total-attenuation", "--data", str(shots), "--exhaustive", "--out", str(tmp_path / "o"))
        assert code == 0
        assert "divergent=1" in (tmp_path / "o").read_text()
