import numpy as np
import pytest

from histloss.toy import (
    DEFAULT_PARAMS,
    Configuration,
    SamplingError,
    dataset_digest,
    dominant_species,
    dump_dataset,
    generate_dataset,
    lj_energy,
    lj_forces,
    min_pair_distance,
    parse_dataset,
    read_dataset,
    split_indices,
    total_energy,
    write_dataset,
)

from oracles import central_difference, lj_energy_direct, random_rotation

EPS = DEFAULT_PARAMS.epsilon
SIG = DEFAULT_PARAMS.sigma


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(seed=3, n_samples=200, atom_range=(2, 8))


def _pair(r, a=1, b=1):
    return Configuration([[0, 0, 0], [r, 0, 0]], [a, b])


@pytest.mark.parametrize("species", [0, 1, 2])
def test_pair_minimum_depth(species):
    r_min = 2 ** (1 / 6) * SIG[species]
    assert lj_energy(_pair(r_min, species, species)) == pytest.approx(-EPS[species], rel=1e-12)
    assert np.abs(lj_forces(_pair(r_min, species, species))).max() < 1e-10


def test_zero_crossing_at_sigma():
    assert abs(lj_energy(_pair(SIG[2], 2, 2))) < 1e-15


def test_lorentz_berthelot_cross_pair():
    sig = 0.5 * (SIG[0] + SIG[2])
    assert lj_energy(_pair(2 ** (1 / 6) * sig, 0, 2)) == pytest.approx(-np.sqrt(EPS[0] * EPS[2]), rel=1e-12)


def test_matches_direct_summation():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pos = rng.uniform(-4, 4, size=(5, 3))
        spc = rng.integers(3, size=5)
        cfg = Configuration(pos, spc)
        ref = lj_energy_direct(pos, spc, EPS, SIG)
        assert abs(lj_energy(cfg) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_forces_match_finite_differences(dataset):
    worst = 0.0
    for s in dataset:
        cfg = s.config

        def energy(x, spc=cfg.species):
            return lj_energy(Configuration(x, spc))

        fd = -central_difference(energy, cfg.positions, 1e-5)
        scale = np.abs(s.forces).max()
        worst = max(worst, np.abs(fd - s.forces).max() / scale)
        np.testing.assert_allclose(s.forces, fd, atol=1e-6)
    assert worst < 1e-5


def test_net_force_and_torque_vanish(dataset):
    for s in dataset:
        f = s.forces
        assert np.abs(f.sum(axis=0)).max() < 1e-10
        arm = s.config.positions - s.config.positions.mean(axis=0)
        assert np.abs(np.cross(arm, f).sum(axis=0)).max() < 1e-8


def test_rigid_motion_invariance(dataset):
    rng = np.random.default_rng(5)
    for s in dataset[:50]:
        rot = random_rotation(rng)
        shift = rng.uniform(-10, 10, size=3)
        moved = Configuration(s.config.positions @ rot.T + shift, s.config.species)
        e0 = lj_energy(s.config)
        assert abs(lj_energy(moved) - e0) <= 1e-9 * max(1.0, abs(e0))
        np.testing.assert_allclose(lj_forces(moved), s.forces @ rot.T, atol=1e-10)


def test_hard_floor_rejected():
    with pytest.raises(ValueError, match="hard floor"):
        lj_energy(_pair(5e-4))


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration([[0, 0, 0]], [0])
    with pytest.raises(ValueError):
        Configuration([[0, 0, 0], [1, 0, 0]], [0])
    cfg = _pair(3.0)
    with pytest.raises(ValueError):
        cfg.positions[0, 0] = 1.0


def test_generation_is_deterministic():
    a = dump_dataset(generate_dataset(1, 10, (2, 4)))
    b = dump_dataset(generate_dataset(1, 10, (2, 4)))
    assert a == b


def test_seed_changes_dataset():
    assert dataset_digest(generate_dataset(1, 10)) != dataset_digest(generate_dataset(2, 10))


def test_generated_samples_respect_invariants(dataset):
    counts = [s.n_atoms for s in dataset]
    assert min(counts) >= 2 and max(counts) <= 8
    assert set(counts) == set(range(2, 9))
    for s in dataset:
        sig = DEFAULT_PARAMS.pair(*np.meshgrid(s.config.species, s.config.species))[1]
        d = np.linalg.norm(s.config.positions[:, None] - s.config.positions[None], axis=-1)
        off = ~np.eye(s.n_atoms, dtype=bool)
        assert np.all(d[off] >= 0.8 * sig[off] - 1e-12)
        assert min_pair_distance(s.config) > 1e-3
        assert np.isfinite(s.per_atom_energy)


def test_per_atom_energy_convention(dataset):
    for s in dataset:
        total = lj_energy(s.config)
        assert s.per_atom_energy == total / s.n_atoms
        # dividing then multiplying can move the last bit
        assert abs(total_energy(s) - total) <= 4 * np.spacing(abs(total))


def test_atom_counts_roughly_uniform():
    counts = np.bincount([s.n_atoms for s in generate_dataset(9, 1400, (2, 8))], minlength=9)[2:]
    assert counts.min() > 150 and counts.max() < 250


def test_infeasible_density_raises():
    with pytest.raises(SamplingError):
        generate_dataset(0, 5, (8, 8), r_min=1.5, bond_range=(1.5, 1.5), max_attempts=3)


@pytest.mark.parametrize("kwargs", [dict(n_samples=0), dict(atom_range=(1, 3)), dict(atom_range=(5, 2))])
def test_generate_argument_validation(kwargs):
    args = dict(seed=0, n_samples=3, atom_range=(2, 4)) | kwargs
    with pytest.raises(ValueError):
        generate_dataset(**args)


def test_serialization_round_trip_is_exact(dataset, tmp_path):
    path = write_dataset(dataset, tmp_path / "d.txt")
    back = read_dataset(path)
    assert len(back) == len(dataset)
    for a, b in zip(dataset, back):
        assert np.array_equal(a.config.positions, b.config.positions)
        assert np.array_equal(a.config.species, b.config.species)
        assert np.array_equal(a.forces, b.forces)
        assert a.per_atom_energy == b.per_atom_energy
    assert dump_dataset(back) == path.read_text()


def test_parser_skips_comments_and_rejects_garbage():
    text = "# header\n2\n0 0 0 0 0 0 0\n1 3 0 0 0 0 0\n-0.5\n"
    (s,) = parse_dataset(text)
    assert s.n_atoms == 2 and s.per_atom_energy == -0.5
    with pytest.raises(ValueError):
        parse_dataset("2\n0 0 0 0 0 0 0\n-0.5\n")
    with pytest.raises(ValueError):
        parse_dataset("2\n0 0 0 0 0 0\n1 3 0 0 0 0 0\n-0.5\n")


def test_split_is_ninety_ten():
    train, val = split_indices(100)
    assert len(train) == 90 and len(val) == 10
    assert list(val) == list(range(9, 100, 10))
    assert not set(train) & set(val)


def test_dominant_species_tie_goes_low():
    s = generate_dataset(0, 1, (2, 2))[0]
    spc = s.config.species
    expected = int(spc[0]) if spc[0] == spc[1] else int(min(spc))
    assert dominant_species(s) == expected
