import numpy as np
import pytest

from attrcrit import fileio
from attrcrit.errors import FormatError, ShapeError, VersionError
from attrcrit.ordering import order_pixels
from attrcrit.proportionality import proportionality, tpn, tps
from attrcrit.synthetic import linear_model, random_cnn


class TestPnm:
    def test_p5_normalized(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = fileio.load_image(p)
        assert img.shape == (1, 2, 2)
        np.testing.assert_array_equal(img.ravel(), [0, 1, 128 / 255, 64 / 255])

    def test_p6_channels(self, tmp_path):
        p = tmp_path / "a.ppm"
        p.write_bytes(b"P6\n# comment\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
        img = fileio.read_pnm(p)
        assert img.shape == (3, 1, 2)
        assert img[0, 0].tolist() == [1, 0] and img[2, 0].tolist() == [0, 1]

    def test_truncated_p6(self, tmp_path):
        p = tmp_path / "b.ppm"
        p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(FormatError):
            fileio.read_pnm(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError):
            fileio.read_pnm(p)

    def test_sixteen_bit(self, tmp_path):
        p = tmp_path / "d.pgm"
        p.write_bytes(b"P5\n2 1\n65535\n" + bytes([0xFF, 0xFF, 0x80, 0x00]))
        np.testing.assert_allclose(fileio.read_pnm(p).ravel(), [1.0, 0x8000 / 65535])

    def test_write_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(3, 4, 5)) / 255
        fileio.write_pnm(tmp_path / "r.ppm", img)
        np.testing.assert_allclose(fileio.read_pnm(tmp_path / "r.ppm"), img)

    def test_shape_mismatch(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(ShapeError):
            fileio.load_image(p, (1, 3, 3))


class TestRawTensor:
    def test_roundtrip_bit_identical(self, tmp_path, rng):
        a = rng.normal(size=(2, 3, 4)).astype(np.float32)
        fileio.write_raw_tensor(tmp_path / "t.rawt", a)
        back = fileio.read_raw_tensor(tmp_path / "t.rawt")
        assert back.astype(np.float32).tobytes() == a.tobytes()
        fileio.write_raw_tensor(tmp_path / "u.rawt", back)
        assert (tmp_path / "t.rawt").read_bytes() == (tmp_path / "u.rawt").read_bytes()

    def test_truncated(self, tmp_path, rng):
        fileio.write_raw_tensor(tmp_path / "t.rawt", np.ones((1, 2, 2)))
        data = (tmp_path / "t.rawt").read_bytes()
        (tmp_path / "t.rawt").write_bytes(data[:-3])
        with pytest.raises(FormatError):
            fileio.read_raw_tensor(tmp_path / "t.rawt")

    def test_nonfinite_rejected(self, tmp_path):
        fileio.write_raw_tensor(tmp_path / "t.rawt", np.array([[[1.0, np.nan]]]))
        with pytest.raises(ValueError):
            fileio.load_image(tmp_path / "t.rawt")

    def test_listing(self, tmp_path):
        for name in ("b.pgm", "a.rawt", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in fileio.list_images(tmp_path)] == ["a.rawt", "b.pgm"]


class TestCsv:
    def test_float_repr_roundtrips(self, tmp_path):
        vals = [0.1 + 0.2, 1 / 3, np.float64(2.5e-17), float("nan")]
        fileio.write_csv(tmp_path / "x.csv", "# attrcrit-curve v1", ["v"], [[v] for v in vals])
        rows = fileio.read_csv(tmp_path / "x.csv", fileio.CURVE_SCHEMA)
        back = [float(r["v"]) for r in rows]
        assert back[:3] == [float(v) for v in vals[:3]]
        assert np.isnan(back[3])

    def test_unknown_version(self, tmp_path):
        (tmp_path / "m.csv").write_text("# attrcrit-metrics v9\na\n1\n")
        with pytest.raises(VersionError):
            fileio.read_csv(tmp_path / "m.csv", fileio.METRICS_SCHEMA)

    def test_missing_schema(self, tmp_path):
        (tmp_path / "m.csv").write_text("a\n1\n")
        with pytest.raises(FormatError):
            fileio.read_csv(tmp_path / "m.csv", fileio.METRICS_SCHEMA)


class TestExportCurves:
    def test_linear_collinear(self, tmp_path):
        model = linear_model([[2.0, 1.0]])
        _, curves = proportionality(model, np.ones(2), order_pixels(np.array([2.0, 1.0])), class_index=0)
        paths = fileio.export_curves("lin", "saliency", curves, tmp_path)
        assert len(paths) == 5
        for orientation in ("forward", "reversed"):
            c = fileio.read_share_curve(tmp_path / f"lin__saliency__necessity_{orientation}.csv")
            np.testing.assert_allclose(c.R, 3 * (1 - c.k), atol=1e-12)

    def test_none_writes_nothing(self, tmp_path):
        assert fileio.export_curves("img", "random", None, tmp_path / "out") == []
        assert not (tmp_path / "out").exists()

    def test_reimport_reproduces_totals(self, tmp_path, rng):
        model = random_cnn(rng)
        x = rng.uniform(size=(1, 8, 8))
        report, curves = proportionality(model, x, order_pixels(rng.normal(size=(8, 8))), class_index=1)
        fileio.export_curves("img", "m", curves, tmp_path)
        load = lambda name: fileio.read_share_curve(tmp_path / f"img__m__{name}.csv")  # noqa: E731
        nf, nr = load("necessity_forward"), load("necessity_reversed")
        sf, sr = load("sufficiency_forward"), load("sufficiency_reversed")
        assert tpn(nf, nr, curves.y0, curves.yb) == pytest.approx(report.tpn, abs=1e-9)
        assert tps(sf, sr, curves.y0) == pytest.approx(report.tps, abs=1e-9)

    def test_areas_file(self, tmp_path, mmodel, ones3):
        _, curves = proportionality(mmodel, ones3, order_pixels(np.array([[1 / 6, 1 / 3, 1 / 2]])), class_index=0)
        fileio.export_curves("x", "A1", curves, tmp_path)
        rows = fileio.read_csv(tmp_path / "x__A1__areas.csv", fileio.CURVE_SCHEMA)
        assert {r["criterion"] for r in rows} == {"necessity", "sufficiency"}
        assert list(rows[0]) == ["criterion", "k", "R_forward", "R_reversed"]

    def test_svg(self, tmp_path, mmodel, ones3):
        pytest.importorskip("matplotlib")
        _, curves = proportionality(mmodel, ones3, order_pixels(np.array([[1 / 6, 1 / 3, 1 / 2]])), class_index=0)
        paths = fileio.export_curves("x", "A1", curves, tmp_path, svg=True)
        assert paths[-1].suffix == ".svg"
        assert paths[-1].read_text().lstrip().startswith("<?xml")

    def test_unwritable(self, tmp_path, mmodel, ones3):
        _, curves = proportionality(mmodel, ones3, order_pixels(np.array([[1 / 6, 1 / 3, 1 / 2]])), class_index=0)
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            fileio.export_curves("x", "A1", curves, blocker / "sub")
