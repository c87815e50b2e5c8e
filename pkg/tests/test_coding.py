"""OMP, atom updates, the learning loop, and the dictionary/code files."""

import numpy as np
import pytest

from rotsparse import BasisSpec, CodeEntry, Dictionary, LearnConfig, SparseCode
from rotsparse import coding
from rotsparse.coding import (
    MSE_SCALE,
    atom_update,
    basis_for,
    code_set,
    ksvd_learn,
    load_dictionary,
    mse,
    omp,
    random_atoms,
    reconstruct,
    reset_unused_atom,
    rksvd_learn,
    save_codes,
    save_dictionary,
)
from rotsparse.errors import FormatError, UnusedAtomError

SPEC7 = BasisSpec(7, n_angles=8)


def make_dictionary(n_atoms=4, spec=SPEC7, seed=0):
    basis = basis_for(spec)
    atoms = random_atoms(n_atoms, basis, np.random.default_rng(seed))
    return Dictionary(spec.resolve(), atoms), basis


def steered_atom(dictionary, basis, m, r):
    n_angles = dictionary.basis_spec.n_angles
    return dictionary.atoms[m] * basis.steering_phases(r, n_angles)


# ---------------------------------------------------------------------------
# reconstruct

def test_reconstruct_empty_code_is_zero():
    dictionary, _ = make_dictionary()
    out = reconstruct(dictionary, SparseCode())
    assert np.all(out == 0)


def test_reconstruct_single_upright_atom():
    dictionary, _ = make_dictionary()
    out = reconstruct(dictionary, SparseCode([CodeEntry(2, 0, 1.0)]))
    assert np.allclose(out, dictionary.atoms[2], atol=0)


def test_reconstruct_norm_equals_weight():
    dictionary, _ = make_dictionary()
    out = reconstruct(dictionary, SparseCode([CodeEntry(1, 5, -3.25)]))
    assert abs(np.linalg.norm(out) - 3.25) < 1e-12


def test_reconstruct_rejects_bad_indices():
    dictionary, _ = make_dictionary()
    with pytest.raises(ValueError):
        reconstruct(dictionary, SparseCode([CodeEntry(99, 0, 1.0)]))
    with pytest.raises(ValueError):
        reconstruct(dictionary, SparseCode([CodeEntry(0, 8, 1.0)]))


# ---------------------------------------------------------------------------
# omp

def test_omp_exact_single_steered_atom():
    dictionary, basis = make_dictionary()
    target = 2.0 * steered_atom(dictionary, basis, 3, 5)
    code = omp(dictionary, target, sparsity=1)
    assert len(code) == 1
    entry = code.entries[0]
    assert (entry.atom, entry.rotation) == (3, 5)
    assert abs(entry.weight - 2.0) < 1e-10
    resid = target - reconstruct(dictionary, code)
    assert np.linalg.norm(resid) < 1e-10


def test_omp_empty_dictionary_returns_norm_as_error():
    spec = SPEC7.resolve()
    basis = basis_for(spec)
    dictionary = Dictionary(spec, np.zeros((0, basis.n_columns), dtype=complex))
    target = basis.analyze(np.random.default_rng(1).standard_normal(basis.n_pixels))
    codes, total = code_set(dictionary, target, sparsity=2)
    assert codes[0].entries == []
    assert abs(total - np.linalg.norm(target) ** 2) < 1e-12


def test_omp_first_pick_matches_bruteforce_scan(rng):
    # oracle: an O(M R B) explicit scan over every steered atom
    dictionary, basis = make_dictionary(n_atoms=5, seed=3)
    n_angles = dictionary.basis_spec.n_angles
    target = basis.analyze(rng.standard_normal(basis.n_pixels))
    code = omp(dictionary, target, sparsity=1)
    best, best_val = None, -1.0
    for m in range(5):
        for r in range(n_angles):
            val = abs(np.vdot(steered_atom(dictionary, basis, m, r), target).real)
            if val > best_val:
                best, best_val = (m, r), val
    assert (code.entries[0].atom, code.entries[0].rotation) == best


def test_omp_same_atom_may_repeat_at_other_rotations():
    dictionary, basis = make_dictionary(n_atoms=1, seed=5)
    target = steered_atom(dictionary, basis, 0, 1) + 0.6 * steered_atom(dictionary, basis, 0, 4)
    code = omp(dictionary, target, sparsity=2)
    pairs = {(e.atom, e.rotation) for e in code.entries}
    assert pairs == {(0, 1), (0, 4)}
    assert len(pairs) == len(code.entries)  # no duplicate pair


def test_omp_sparsity_clamped_to_augmented_size():
    spec = BasisSpec(7, n_angles=2)
    dictionary, basis = make_dictionary(n_atoms=2, spec=spec)
    target = basis.analyze(np.random.default_rng(0).standard_normal(basis.n_pixels))
    code = omp(dictionary, target, sparsity=50)
    assert len(code) <= 4


def test_omp_residual_orthogonal_to_selection(rng):
    dictionary, basis = make_dictionary(n_atoms=4, seed=9)
    target = basis.analyze(rng.standard_normal(basis.n_pixels))
    code = omp(dictionary, target, sparsity=3)
    resid = target - reconstruct(dictionary, code)
    for entry in code.entries:
        row = steered_atom(dictionary, basis, entry.atom, entry.rotation)
        assert abs(np.vdot(row, resid).real) < 1e-8


def test_omp_residual_monotone(rng):
    dictionary, basis = make_dictionary(n_atoms=4, seed=11)
    target = basis.analyze(rng.standard_normal(basis.n_pixels))
    norms = []
    for k in range(1, 5):
        code = omp(dictionary, target, sparsity=k)
        norms.append(np.linalg.norm(target - reconstruct(dictionary, code)))
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


# ---------------------------------------------------------------------------
# code_set

def test_code_set_perfect_on_steered_atoms():
    dictionary, basis = make_dictionary(n_atoms=3, seed=2)
    targets = np.array([
        1.5 * steered_atom(dictionary, basis, 0, 2),
        -0.5 * steered_atom(dictionary, basis, 2, 7),
    ])
    codes, total = code_set(dictionary, targets, sparsity=1)
    assert total < 1e-8 * len(targets)


def test_code_set_deterministic_on_duplicates(rng):
    dictionary, basis = make_dictionary(n_atoms=3, seed=4)
    target = basis.analyze(rng.standard_normal(basis.n_pixels))
    codes, _ = code_set(dictionary, np.array([target, target]), sparsity=2)
    assert codes[0] == codes[1]


def test_code_set_matches_per_patch_calls(rng):
    dictionary, basis = make_dictionary(n_atoms=3, seed=6)
    targets = basis.analyze(rng.standard_normal((5, basis.n_pixels)))
    codes, total = code_set(dictionary, targets, sparsity=2)
    singles = 0.0
    for row, code in zip(targets, codes):
        single = omp(dictionary, row, sparsity=2)
        assert single == code
        singles += np.linalg.norm(row - reconstruct(dictionary, single)) ** 2
    assert abs(total - singles) < 1e-10


def test_code_set_order_preserved_with_threads(rng):
    dictionary, basis = make_dictionary(n_atoms=3, seed=8)
    targets = basis.analyze(rng.standard_normal((2100, basis.n_pixels)))
    serial, err1 = code_set(dictionary, targets, sparsity=1, threads=1)
    threaded, err2 = code_set(dictionary, targets, sparsity=1, threads=4)
    assert serial == threaded
    assert err1 == err2


def test_fast_correlation_path_matches_direct(rng):
    dictionary, basis = make_dictionary(n_atoms=4, seed=10)
    targets = basis.analyze(rng.standard_normal((40, basis.n_pixels)))
    direct, err_d = code_set(dictionary, targets, sparsity=2)
    grouped, err_g = code_set(dictionary, targets, sparsity=2, fast_correlation=True)
    assert abs(err_d - err_g) < 1e-8
    for a, b in zip(direct, grouped):
        assert [(e.atom, e.rotation) for e in a.entries] == \
            [(e.atom, e.rotation) for e in b.entries]
        assert np.allclose([e.weight for e in a.entries],
                           [e.weight for e in b.entries], atol=1e-8)


# ---------------------------------------------------------------------------
# rotation covariance

def test_rotation_covariance_error_and_relabeling(rng):
    dictionary, basis = make_dictionary(n_atoms=3, seed=12)
    n_angles = dictionary.basis_spec.n_angles
    for trial in range(20):
        target = basis.analyze(rng.standard_normal(basis.n_pixels))
        r0 = int(rng.integers(1, n_angles))
        steered = target * basis.steering_phases(r0, n_angles)
        code_a, err_a = code_set(dictionary, target, sparsity=2)
        code_b, err_b = code_set(dictionary, steered, sparsity=2)
        assert abs(err_a - err_b) < 1e-8
        for ea, eb in zip(code_a[0].entries, code_b[0].entries):
            assert eb.atom == ea.atom
            assert eb.rotation == (ea.rotation + r0) % n_angles
            assert abs(eb.weight - ea.weight) < 1e-8


# ---------------------------------------------------------------------------
# atom update / reset

def test_atom_update_rank_one_recovers_atom():
    dictionary, basis = make_dictionary(n_atoms=2, seed=14)
    target = steered_atom(dictionary, basis, 0, 3)
    codes = [SparseCode([CodeEntry(0, 3, 1.0)])]
    new_atom, new_codes = atom_update(0, np.array([target]), codes, dictionary)
    assert abs(abs(np.vdot(new_atom, dictionary.atoms[0]))) > 1 - 1e-8
    assert abs(abs(new_codes[0].entries[0].weight) - 1.0) < 1e-8


def test_atom_update_aligns_rotated_copies():
    # two patches that are steered copies of one template at different
    # rotations; the update must recover the template, not their average
    dictionary, basis = make_dictionary(n_atoms=1, seed=15)
    n_angles = dictionary.basis_spec.n_angles
    template = random_atoms(1, basis, np.random.default_rng(99))[0]
    targets = np.array([
        template * basis.steering_phases(2, n_angles),
        template * basis.steering_phases(6, n_angles),
    ])
    codes = [SparseCode([CodeEntry(0, 2, 1.0)]), SparseCode([CodeEntry(0, 6, 1.0)])]
    new_atom, _ = atom_update(0, targets, codes, dictionary)
    assert abs(np.vdot(new_atom, template)) > 0.999
    # oracle: direct average of the aligned residuals points the same way
    avg = targets[0] * np.conj(basis.steering_phases(2, n_angles))
    avg = avg + targets[1] * np.conj(basis.steering_phases(6, n_angles))
    assert abs(np.vdot(new_atom, avg / np.linalg.norm(avg))) > 0.999


def test_atom_update_orthogonal_columns_picks_dominant():
    dictionary, basis = make_dictionary(n_atoms=1, spec=BasisSpec(7, n_angles=1), seed=16)
    cols = random_atoms(2, basis, np.random.default_rng(7))
    # orthogonalize and scale unevenly
    cols[1] -= np.vdot(cols[0], cols[1]) * cols[0]
    cols[1] /= np.linalg.norm(cols[1])
    targets = np.array([3.0 * cols[0], 1.0 * cols[1]])
    codes = [SparseCode([CodeEntry(0, 0, 1.0)]), SparseCode([CodeEntry(0, 0, 1.0)])]
    new_atom, _ = atom_update(0, targets, codes, dictionary)
    assert abs(np.vdot(new_atom, cols[0])) > 1 - 1e-8


def test_atom_update_unused_raises():
    dictionary, basis = make_dictionary(n_atoms=2, seed=17)
    targets = np.array([steered_atom(dictionary, basis, 0, 1)])
    codes = [SparseCode([CodeEntry(0, 1, 1.0)])]
    with pytest.raises(UnusedAtomError):
        atom_update(1, targets, codes, dictionary)


def test_atom_update_does_not_increase_error(rng):
    # fixed supports and rotations: total squared error over contributing
    # patches must not grow (rank-1 optimality over the aligned residuals)
    dictionary, basis = make_dictionary(n_atoms=2, seed=18)
    targets = basis.analyze(rng.standard_normal((6, basis.n_pixels)))
    codes, _ = code_set(dictionary, targets, sparsity=2)

    def total_error(d, cs):
        return sum(
            np.linalg.norm(t - reconstruct(d, c)) ** 2 for t, c in zip(targets, cs)
        )

    before = total_error(dictionary, codes)
    new_atom, new_codes = atom_update(0, targets, codes, dictionary)
    updated = Dictionary(dictionary.basis_spec, dictionary.atoms.copy())
    updated.atoms[0] = new_atom
    after = total_error(updated, new_codes)
    assert after <= before + 1e-10


def test_atom_update_duplicate_occurrence_picks_largest_weight():
    dictionary, basis = make_dictionary(n_atoms=1, seed=19)
    target = (0.4 * steered_atom(dictionary, basis, 0, 1)
              + 2.0 * steered_atom(dictionary, basis, 0, 5))
    codes = [SparseCode([CodeEntry(0, 1, 0.4), CodeEntry(0, 5, 2.0)])]
    new_atom, new_codes = atom_update(0, np.array([target]), codes, dictionary)
    # the r0=5 occurrence (larger |w|) is the one that was refit
    touched = [e for e in new_codes[0].entries if e.rotation == 5]
    assert len(touched) == 1


def test_reset_unused_atom_targets_worst_patch():
    dictionary, basis = make_dictionary(n_atoms=2, seed=20)
    good = steered_atom(dictionary, basis, 0, 0)
    bad = basis.analyze(np.random.default_rng(3).standard_normal(basis.n_pixels))
    bad = 2.0 * bad / np.linalg.norm(bad)
    targets = np.array([good, bad])
    codes, _ = code_set(dictionary, targets, sparsity=1)
    # oracle: recompute both errors exhaustively
    errs = [np.linalg.norm(t - reconstruct(dictionary, c)) ** 2
            for t, c in zip(targets, codes)]
    worst = int(np.argmax(errs))
    updated = reset_unused_atom(dictionary, 1, targets, codes)
    expected = targets[worst] / np.linalg.norm(targets[worst])
    assert np.allclose(updated.atoms[1], expected, atol=1e-12)


def test_reset_unused_atom_tie_breaks_lowest_index():
    dictionary, basis = make_dictionary(n_atoms=2, seed=21)
    t0 = steered_atom(dictionary, basis, 0, 2)
    t1 = steered_atom(dictionary, basis, 0, 4)
    targets = np.array([t0, t1])
    codes, total = code_set(dictionary, targets, sparsity=1)
    assert total < 1e-12  # both perfectly coded -> errors tie at ~0
    updated = reset_unused_atom(dictionary, 1, targets, codes)
    assert np.allclose(updated.atoms[1], t0 / np.linalg.norm(t0), atol=1e-12)


def test_reset_single_patch_direction():
    dictionary, basis = make_dictionary(n_atoms=1, seed=22)
    patch = basis.analyze(np.random.default_rng(5).standard_normal(basis.n_pixels))
    codes = [SparseCode()]
    updated = reset_unused_atom(dictionary, 0, np.array([patch]), codes)
    assert np.allclose(updated.atoms[0], patch / np.linalg.norm(patch), atol=1e-12)


# ---------------------------------------------------------------------------
# learning

def test_learn_rejects_empty_patch_set():
    basis = basis_for(SPEC7)
    with pytest.raises(ValueError):
        rksvd_learn(basis, np.zeros((0, basis.n_columns)), LearnConfig(1, 1))


def test_ksvd_is_rksvd_with_one_angle(rng):
    basis = basis_for(BasisSpec(7))
    targets = basis.analyze(rng.standard_normal((30, basis.n_pixels)))
    config = LearnConfig(n_atoms=3, sparsity=2, n_angles=5, iterations=3, seed=7)
    d_k, c_k, r_k = ksvd_learn(basis, targets, config)
    d_r, c_r, r_r = rksvd_learn(basis, targets, LearnConfig(
        n_atoms=3, sparsity=2, n_angles=1, iterations=3, seed=7))
    assert np.array_equal(d_k.atoms, d_r.atoms)
    assert c_k == c_r
    assert r_k.objective == r_r.objective


def test_learn_single_patch_single_atom():
    basis = basis_for(BasisSpec(7))
    patch = basis.analyze(np.random.default_rng(1).standard_normal(basis.n_pixels))
    patch /= np.linalg.norm(patch)
    targets = np.array([patch] * 4)
    dictionary, codes, report = ksvd_learn(
        basis, targets, LearnConfig(n_atoms=1, sparsity=1, iterations=3, seed=0))
    assert report.objective[-1] < 1e-12
    assert abs(abs(np.vdot(dictionary.atoms[0], patch)) - 1.0) < 1e-8


def test_learn_objective_decreases_and_reports(rng):
    basis = basis_for(BasisSpec(7))
    targets = basis.analyze(rng.standard_normal((60, basis.n_pixels)))
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    config = LearnConfig(n_atoms=4, sparsity=2, n_angles=6, iterations=6, seed=1)
    dictionary, codes, report = rksvd_learn(basis, targets, config)
    assert report.objective[-1] <= report.objective[0]
    assert len(report.objective) == config.iterations + 1  # final recode appended
    assert report.wall_time > 0
    assert report.atom_usage.sum() == sum(len(c) for c in codes)
    assert all(len(c) <= config.sparsity for c in codes)
    for code in codes:
        pairs = [(e.atom, e.rotation) for e in code.entries]
        assert len(pairs) == len(set(pairs))


def test_learn_atoms_stay_unit_and_symmetric(rng):
    basis = basis_for(BasisSpec(7))
    targets = basis.analyze(rng.standard_normal((40, basis.n_pixels)))
    config = LearnConfig(n_atoms=3, sparsity=1, n_angles=4, iterations=4, seed=2)
    dictionary, _, _ = rksvd_learn(basis, targets, config)
    norms = np.linalg.norm(dictionary.atoms, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-10
    pair = basis.conjugate_pair_index
    sym_err = np.abs(dictionary.atoms - np.conj(dictionary.atoms[:, pair])).max()
    assert sym_err < 1e-8


def test_learn_deterministic(rng):
    basis = basis_for(BasisSpec(7))
    targets = basis.analyze(rng.standard_normal((25, basis.n_pixels)))
    config = LearnConfig(n_atoms=3, sparsity=2, n_angles=4, iterations=3, seed=42)
    d1, c1, r1 = rksvd_learn(basis, targets, config)
    d2, c2, r2 = rksvd_learn(basis, targets, config)
    assert np.array_equal(d1.atoms, d2.atoms)
    assert c1 == c2
    assert r1.objective == r2.objective


# ---------------------------------------------------------------------------
# mse

def test_mse_perfect_codes_zero():
    dictionary, basis = make_dictionary(n_atoms=2, seed=23)
    targets = np.array([steered_atom(dictionary, basis, 1, 3)])
    codes, _ = code_set(dictionary, targets, sparsity=1)
    assert mse(targets, dictionary, codes) < 1e-10


def test_mse_empty_codes_unit_patches_equals_scale():
    dictionary, basis = make_dictionary(n_atoms=2, seed=24)
    rng = np.random.default_rng(0)
    targets = rng.standard_normal((3, basis.n_columns)) * (1 + 0j)
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    codes = [SparseCode() for _ in range(3)]
    assert abs(mse(targets, dictionary, codes) - MSE_SCALE) < 1e-10


def test_mse_empty_set_rejected():
    dictionary, _ = make_dictionary()
    with pytest.raises(ValueError):
        mse(np.zeros((0, 1)), dictionary, [])


def test_mse_consistent_with_pixel_domain(rng):
    # synthesized-patch MSE differs from the coefficient-domain value only by
    # the basis-projection residual and the near-unit frame bounds
    dictionary, basis = make_dictionary(n_atoms=3, seed=25)
    pixels = rng.standard_normal((8, basis.n_pixels))
    pixels /= np.linalg.norm(pixels, axis=1, keepdims=True)
    targets = basis.analyze(pixels)
    codes, _ = code_set(dictionary, targets, sparsity=2)
    coeff_val = mse(targets, dictionary, codes) / MSE_SCALE
    lams = [e for pair in basis.ring_eigs for e in pair]
    lo, hi = min(lams), max(lams)
    pix_total = 0.0
    in_span_total = 0.0
    for pix, t, c in zip(pixels, targets, codes):
        rec = basis.synthesize(reconstruct(dictionary, c))
        pix_total += np.linalg.norm(pix - rec) ** 2
        proj = basis.synthesize(t)
        in_span_total += np.linalg.norm(proj - rec) ** 2
    # the in-span part of the pixel error is a frame-bounded image of the
    # coefficient-domain error
    in_span_mean = in_span_total / len(pixels)
    assert lo * coeff_val - 1e-9 <= in_span_mean <= hi * coeff_val + 1e-9
    assert pix_total / len(pixels) >= in_span_mean - 1e-12


# ---------------------------------------------------------------------------
# files

def test_dictionary_roundtrip(tmp_path):
    dictionary, _ = make_dictionary(n_atoms=3, seed=26)
    path = tmp_path / "dict.rsc"
    save_dictionary(dictionary, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "RSCDICT 1"
    assert lines[1].startswith("N 7 S 3 R 8 M 3")
    assert lines[2].startswith("T ")
    loaded = load_dictionary(path)
    # the stored cutoffs are the effective ones, so the rebuilt basis holds
    # exactly the same columns as the original
    original_basis = basis_for(dictionary.basis_spec)
    loaded_basis = basis_for(loaded.basis_spec)
    assert np.array_equal(loaded_basis.columns, original_basis.columns)
    assert loaded.basis_spec.resolve().n_angles == dictionary.basis_spec.resolve().n_angles
    assert np.array_equal(loaded.atoms, dictionary.atoms)


def test_load_dictionary_rejects_garbage(tmp_path):
    path = tmp_path / "bad.rsc"
    path.write_text("RSCDICT 2\n")
    with pytest.raises(FormatError):
        load_dictionary(path)
    path.write_text("RSCDICT 1\nN 7 S 3 R 8 M 1\nT 1 6 7\n1.0 2.0\n")
    with pytest.raises(FormatError):
        load_dictionary(path)


def test_save_codes_format(tmp_path):
    codes = [SparseCode([CodeEntry(0, 3, 1.5)]), SparseCode([CodeEntry(2, 1, -0.25)])]
    path = tmp_path / "codes.csv"
    save_codes(codes, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "patch,m,r,w"
    assert lines[1] == "0,0,3,1.5"
    assert lines[2] == "1,2,1,-0.25"
