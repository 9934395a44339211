import struct

import pytest

from demest.dem import Dem, DemEvent, EventMask
from demest.errors import FormatError
from demest.formats import (
    dem_from_text,
    dem_to_text,
    read_dem,
    read_shots,
    shots_from_binary,
    shots_to_binary,
    write_dem,
    write_output,
    write_shots,
)
from demest.histories import DetectorHistories


class TestDemText:
    def test_layout(self, r2_dem):
        text = dem_to_text(r2_dem, header=["made by a test"])
        assert text.splitlines() == [
            "# made by a test",
            "detectors 2",
            "error(0.2) D1",
            "error(0.1) D0",
            "error(0.05) D0 D1",
        ]

    def test_round_trip(self, r2_dem):
        assert dem_from_text(dem_to_text(r2_dem)) == r2_dem

    def test_round_trip_keeps_std_error(self):
        dem = Dem(3, (DemEvent(EventMask.from_string("101"), 0.0123, std_error=0.0004),))
        parsed = dem_from_text(dem_to_text(dem))
        assert parsed.events[0].std_error == 0.0004
        assert parsed.events[0].probability == 0.0123

    def test_comments_and_blank_lines(self):
        text = "# header\n\ndetectors 3\n# note\nerror(0.01) D2  # trailing\n\n"
        dem = dem_from_text(text)
        assert dem.n_detectors == 3
        assert dem.events[0].mask.to_string() == "001"

    def test_empty_dem(self):
        dem = dem_from_text("detectors 60\n")
        assert dem.n_detectors == 60
        assert len(dem) == 0

    def test_unordered_indices_accepted(self):
        dem = dem_from_text("detectors 4\nerror(0.1) D3 D1\n")
        assert dem.events[0].mask.indices == (1, 3)

    def test_repeated_masks_merge(self):
        dem = dem_from_text("detectors 2\nerror(0.1) D0\nerror(0.2) D0\n")
        assert len(dem) == 1
        assert dem.events[0].probability == pytest.approx(0.26)

    @pytest.mark.parametrize(
        "text",
        [
            "error(0.1) D0\n",
            "detectors 2\nerror(0.1) D2\n",
            "detectors 2\nerror(abc) D0\n",
            "detectors 2\nerror(0.1)\n",
            "detectors 2\nerror(0.1) D0 D0\n",
            "detectors 2\nerror(1.5) D0\n",
            "detectors 2\nflip D0\n",
            "",
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(FormatError):
            dem_from_text(text)

    def test_error_names_the_line(self):
        with pytest.raises(FormatError) as info:
            dem_from_text("detectors 2\nerror(0.1) D0\nbogus\n", path="x.dem")
        assert info.value.line == 3
        assert "x.dem:3" in str(info.value)

    def test_file_round_trip(self, tmp_path, r2_dem):
        path = tmp_path / "r2.dem"
        write_dem(r2_dem, path, header=["h"])
        assert read_dem(path) == r2_dem
        assert not (tmp_path / "r2.dem.tmp").exists()


class TestShotFiles:
    def test_binary_layout(self):
        data = DetectorHistories.from_strings(["101", "010"])
        blob = shots_to_binary(data)
        assert blob == b"DEMH" + bytes([1]) + struct.pack("<I", 3) + struct.pack("<Q", 2) + bytes([0b101, 0b010])

    def test_text_and_binary_agree(self, tmp_path, r2_data):
        txt, bin_ = tmp_path / "s.txt", tmp_path / "s.bin"
        part = r2_data.take(range(1000))
        write_shots(part, txt, "txt")
        write_shots(part, bin_, "bin")
        assert read_shots(txt) == part
        assert read_shots(bin_) == part

    def test_text_lines(self, tmp_path):
        path = tmp_path / "z.txt"
        write_shots(DetectorHistories.zeros(4, 3), path, "txt")
        assert path.read_text() == "0000\n0000\n0000\n"

    def test_text_zero_shots(self, tmp_path):
        path = tmp_path / "none.txt"
        data = DetectorHistories.zeros(9, 0)
        write_shots(data, path, "txt")
        assert path.read_text() == "# detectors 9\n"
        assert read_shots(path) == data

    def test_declared_count_must_match(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("# detectors 3\n0101\n")
        with pytest.raises(FormatError):
            read_shots(path)

    def test_binary_zero_shots(self):
        data = DetectorHistories.zeros(9, 0)
        assert shots_from_binary(shots_to_binary(data)) == data

    def test_truncated_binary(self):
        blob = shots_to_binary(DetectorHistories.from_strings(["1", "0"]))
        with pytest.raises(FormatError):
            shots_from_binary(blob[:-1])
        with pytest.raises(FormatError):
            shots_from_binary(blob[:10])

    def test_bad_version(self):
        blob = bytearray(shots_to_binary(DetectorHistories.from_strings(["1"])))
        blob[4] = 2
        with pytest.raises(FormatError):
            shots_from_binary(bytes(blob))

    def test_nonzero_padding_rejected(self):
        blob = struct.pack("<4sBIQ", b"DEMH", 1, 3, 1) + bytes([0b1000])
        with pytest.raises(FormatError):
            shots_from_binary(blob)

    def test_garbage_text(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("0101\n01x1\n")
        with pytest.raises(FormatError):
            read_shots(path)

    def test_empty_text(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("")
        with pytest.raises(FormatError):
            read_shots(path)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(FormatError):
            write_shots(DetectorHistories.zeros(2, 1), tmp_path / "x", "csv")


class TestWriteOutput:
    def test_stdout(self, capsys):
        write_output("-", "hello\n")
        assert capsys.readouterr().out == "hello\n"

    def test_replaces_existing_file(self, tmp_path):
        path = tmp_path / "out.txt"
        path.write_text("old")
        write_output(path, "new")
        assert path.read_text() == "new"
        assert not (tmp_path / "out.txt.tmp").exists()

    def test_failed_write_leaves_no_temporary(self, tmp_path, monkeypatch):
        path = tmp_path / "out.txt"
        path.write_text("old")

        def fail(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr("demest.formats.os.replace", fail)
        with pytest.raises(OSError):
            write_output(path, "new")
        assert path.read_text() == "old"
        assert list(tmp_path.iterdir()) == [path]
