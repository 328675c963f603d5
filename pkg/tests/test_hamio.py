import gzip

import numpy as np
import pytest

from duccex.hamio import (
    ActiveSpace,
    FcidumpError,
    SpatialIntegrals,
    classify_active,
    emit_fcidump,
    parse_fcidump,
    read_fcidump,
    restricted_energy,
    to_spin_orbital,
    write_fcidump,
)

from .oracles import loop_v_as, random_integrals

HEADER = " &FCI NORB=1,NELEC=2,MS2=0,\n  ORBSYM=1,\n  ISYM=1,\n &END\n"


def random_set(rng, n=4, n_elec=2):
    h, g = random_integrals(rng, n)
    return SpatialIntegrals(n, float(rng.normal()), h, g, n_elec, 0)


def test_single_eri_line_fills_symmetry_images():
    ints = parse_fcidump(HEADER.replace("NORB=1", "NORB=2").replace("ORBSYM=1", "ORBSYM=1,1")
                         + "1.5 1 1 1 1\n0.25 2 1 1 1\n")
    assert ints.eri[0, 0, 0, 0] == 1.5
    for idx in [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)]:
        assert ints.eri[idx] == 0.25


def test_core_energy_line():
    ints = parse_fcidump(HEADER + "0.7142857142857143 0 0 0 0\n")
    assert ints.e_core == 0.7142857142857143


def test_header_variants_and_fortran_exponents():
    text = "&FCI NORB=1, NELEC=2, MS2=0, ORBSYM=1, ISYM=1 /\n-1.0D+00 1 1 0 0\n"
    ints = parse_fcidump(text)
    assert ints.h[0, 0] == -1.0


def test_conflicting_duplicate_rejected():
    with pytest.raises(FcidumpError):
        parse_fcidump(HEADER + "1.0 1 1 1 1\n1.1 1 1 1 1\n")


def test_tolerated_duplicate():
    ints = parse_fcidump(HEADER + "1.0 1 1 1 1\n1.0000000000001 1 1 1 1\n")
    assert abs(ints.eri[0, 0, 0, 0] - 1.0) < 1e-12


def test_out_of_range_index_rejected():
    with pytest.raises(FcidumpError):
        parse_fcidump(HEADER + "1.0 2 1 1 1\n")


def test_missing_header_rejected():
    with pytest.raises(FcidumpError):
        parse_fcidump("1.0 1 1 1 1\n")


def test_emit_one_orbital_system():
    h = np.array([[-1.0]])
    g = np.array([[[[0.5]]]])
    text = emit_fcidump(SpatialIntegrals(1, 0.0, h, g, 2, 0))
    body = text.split("&END\n", 1)[1].strip().splitlines()
    assert len(body) == 2
    assert parse_fcidump(text).allclose(SpatialIntegrals(1, 0.0, h, g, 2, 0))


def test_round_trip_random(rng):
    ints = random_set(rng, 5)
    back = parse_fcidump(emit_fcidump(ints))
    assert back.allclose(ints, atol=1e-15)


def test_emit_order_matches_reference_sort(rng):
    ints = random_set(rng, 4)
    body = emit_fcidump(ints).split("&END\n", 1)[1].splitlines()
    eri_idx = [tuple(int(x) for x in ln.split()[1:]) for ln in body if "0" not in ln.split()[1:]]

    def pair(a, b):
        return a * (a - 1) // 2 + b  # 1-based a >= b

    expected = sorted(eri_idx, key=lambda t: (pair(t[0], t[1]), -pair(t[2], t[3])))
    assert eri_idx == expected
    for p, q, r, s in eri_idx:
        assert p >= q and r >= s and pair(p, q) >= pair(r, s)


def test_gzip_io(tmp_path, rng):
    ints = random_set(rng, 3)
    path = tmp_path / "x.fcidump.gz"
    write_fcidump(ints, path)
    with gzip.open(path, "rt") as fh:
        assert "&FCI" in fh.read()
    assert read_fcidump(path).allclose(ints, atol=1e-15)


def test_spin_duplication_one_orbital():
    ints = SpatialIntegrals(1, 0.0, [[-1.0]], np.full((1, 1, 1, 1), 0.5), 2, 0)
    H = to_spin_orbital(ints)
    assert np.array_equal(H.h_so, np.diag([-1.0, -1.0]))
    assert H.v_as[0, 1, 0, 1] == 0.5
    assert H.v_as[0, 1, 1, 0] == -0.5


def test_v_as_matches_loop_oracle(h2_sto3g):
    ref = loop_v_as(h2_sto3g.spatial.eri)
    assert np.abs(h2_sto3g.v_as - ref).max() < 1e-14
    v = h2_sto3g.v_as
    assert np.array_equal(v, -v.transpose(1, 0, 2, 3))
    assert np.array_equal(v, -v.transpose(0, 1, 3, 2))
    assert np.abs(v - v.transpose(2, 3, 0, 1)).max() == 0


def test_reference_energy_cross_representation(h2_631g):
    e_spin = h2_631g.determinant_energy([0, 1])
    e_spatial = restricted_energy(h2_631g.spatial, 1)
    assert abs(e_spin - e_spatial) < 1e-12


def test_active_space_classification():
    flags = classify_active(ActiveSpace((0, 1, 2, 3)), 4)
    assert flags.all()
    assert ActiveSpace((0,)).is_external((0, 2), 2)
    flags = classify_active(ActiveSpace((0, 1, 2, 3)), 30)
    assert flags.sum() == 8 and (~flags).sum() == 52


def test_active_space_errors():
    with pytest.raises(ValueError):
        ActiveSpace((0, 0))
    with pytest.raises(ValueError):
        ActiveSpace((0, 5)).validate(4)
