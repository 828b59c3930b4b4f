import numpy as np
import pytest
from hypothesis import given, strategies as st

from cellflux.errors import DomainError
from cellflux.fem import ScalarField
from cellflux.geometry import Marker
from cellflux.io import (field_filename, read_csv, read_field_csv, read_mesh, read_metadata, write_csv,
                         write_field_csv, write_mesh, write_metadata)


def test_mesh_round_trip(tmp_path, coarse_full):
    path = write_mesh(coarse_full, tmp_path / "full.mesh")
    back = read_mesh(path)
    assert np.array_equal(back.nodes, coarse_full.nodes)
    assert np.array_equal(back.triangles, coarse_full.triangles)
    assert np.array_equal(back.edge_markers, coarse_full.edge_markers)
    assert np.array_equal(back.cell_polygon, coarse_full.cell_polygon)
    assert back.circle.radius == pytest.approx(1.0, abs=1e-12)
    assert back.half_width == 5.0 and not back.is_annulus


def test_annulus_round_trip(tmp_path, coarse_annulus):
    back = read_mesh(write_mesh(coarse_annulus, tmp_path / "annulus.mesh"))
    assert back.is_annulus
    assert back.n_triangles == coarse_annulus.n_triangles
    assert back.area() == pytest.approx(coarse_annulus.area(), rel=1e-14)


def test_mesh_text_layout(tmp_path, coarse_full):
    text = write_mesh(coarse_full, tmp_path / "m.mesh").read_text().splitlines()
    assert text[0] == f"nodes {coarse_full.n_nodes} triangles {coarse_full.n_triangles}"
    assert text[-1].split()[-1] in {Marker.OUTER_WALL.label, Marker.CELL_BOUNDARY.label}


def test_bad_mesh_header(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("vertices 3\n")
    with pytest.raises(DomainError):
        read_mesh(p)


def test_field_round_trip(tmp_path, coarse_full):
    vals = np.sin(coarse_full.nodes[:, 0]) * 1e-7
    vals[3] = np.nan
    f = ScalarField(coarse_full, vals, 10.0)
    path = write_field_csv(f, tmp_path, "PointGreen")
    assert path.name == "PointGreen_t10.0.csv" == field_filename("PointGreen", 10.0)
    xy, back = read_field_csv(path)
    assert np.array_equal(xy, coarse_full.nodes)
    assert np.isnan(back[3])
    assert np.array_equal(np.delete(back, 3), np.delete(vals, 3))
    assert path.read_text().splitlines()[0] == "node_index,x,y,value"


def test_metadata_round_trip(tmp_path):
    p = write_metadata(tmp_path / "metadata.txt", {"D": 0.1, "variant": "Exclusion", "times": [1.0, 2.5]})
    meta = read_metadata(p)
    assert meta == {"D": "0.10000000000000001", "variant": "Exclusion", "times": "1, 2.5"}
    assert float(meta["D"]) == 0.1


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_round_trip_exact(values):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = write_csv(Path(d) / "c.csv", {"a": values, "b": list(range(len(values)))})
        back = read_csv(p)
    assert np.array_equal(back["a"], np.array(values))
    assert np.array_equal(back["b"], np.arange(len(values)))


def test_csv_unequal_columns(tmp_path):
    with pytest.raises(DomainError):
        write_csv(tmp_path / "x.csv", {"a": [1.0], "b": [1.0, 2.0]})
