"""Adaptive dictionary learning and adaptive sparse coding.

Dictionaries are learned per parameter map with an iterative thresholding
and K residual means update. Adaptivity covers both the dictionary size K
(coherent and rarely used atoms are pruned, promising candidates harvested
from badly approximated patches are added) and the sparsity level S, which
is re-estimated every round from how many coefficients exceed the noise
threshold.

Sparse coding uses orthogonal matching pursuit with a data-driven stopping
rule: the pursuit ends as soon as no atom correlates with the residual above
tau = sigma * sqrt(2 ln K), i.e. when the residual is indistinguishable from
noise. This keeps the codes short in smooth regions and longer around edges
without any per-parameter tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .patches import PatchMatrix


class AdlError(ValueError):
    """Raised on invalid dictionary-learning inputs."""


@dataclass
class Dictionary:
    """Unit-norm atom matrix of shape (d, K)."""

    atoms: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.atoms.ndim != 2 or self.atoms.shape[1] < 1:
            raise AdlError("atoms must be a (d, K) matrix with K >= 1")

    @property
    def d(self) -> int:
        return self.atoms.shape[0]

    @property
    def K(self) -> int:
        return self.atoms.shape[1]

    def validate(self, tol: float = 1e-8) -> "Dictionary":
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.max(np.abs(norms - 1.0)) > tol:
            raise AdlError("atoms are not unit-norm")
        return self


@dataclass
class SparseCodeSet:
    """Per-patch sparse codes in slot form.

    support_slots / coeff_slots have shape (S_reached, L); row i of column j
    is the i-th selected atom of patch j, valid for i < sizes[j]. `means`
    keeps the per-patch DC offsets removed before coding.
    """

    support_slots: np.ndarray
    coeff_slots: np.ndarray
    sizes: np.ndarray
    means: np.ndarray

    @property
    def n_patches(self) -> int:
        return self.sizes.size

    def support_sizes(self) -> np.ndarray:
        return self.sizes

    def per_patch(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.sizes[j]
        return self.support_slots[:s, j].copy(), self.coeff_slots[:s, j].copy()

    def to_dense(self, n_atoms: int) -> np.ndarray:
        """Dense coefficient matrix of shape (K, L)."""
        dense = np.zeros((n_atoms, self.n_patches))
        cols = np.arange(self.n_patches)
        for i in range(self.support_slots.shape[0]):
            live = self.sizes > i
            dense[self.support_slots[i, live], cols[live]] += self.coeff_slots[i, live]
        return dense


@dataclass(frozen=True)
class AdlConstants:
    """Pruning / growth constants of the adaptive learner.

    mu_max: maximal allowed atom coherence before merging.
    f_min: an atom must be selected by at least this fraction of patches
        (divided by K) to survive; k_min/k_max bound the dictionary size as
        multiples of d; s_cap bounds the adaptive sparsity level.
    """

    mu_max: float = 0.8
    f_min_over_k: float = 0.25  # usage threshold fraction = f_min_over_k / K
    k_min_factor: float = 0.5
    k_max_factor: float = 8.0
    candidate_energy_factor: float = 1.5
    s_grow_period: int = 3  # rounds required at a level before growing again

    def k_min(self, d: int) -> int:
        return max(1, int(round(self.k_min_factor * d)))

    def k_max(self, d: int) -> int:
        return int(round(self.k_max_factor * d))

    def s_cap(self, d: int) -> int:
        return max(1, min(d // 2, 16))

    def candidates_per_round(self, d: int) -> int:
        return max(1, int(round(np.log(d))))


@dataclass
class AdlState:
    """Learner state for one parameter map."""

    dictionary: Dictionary
    sigma: float
    s_hat: int = 1
    usage: np.ndarray = field(default=None)  # type: ignore[assignment]
    constants: AdlConstants = field(default_factory=AdlConstants)
    rounds_at_level: int = 0

    def __post_init__(self):
        if self.usage is None:
            self.usage = np.zeros(self.dictionary.K)
        if self.s_hat < 1:
            raise AdlError("s_hat must be >= 1")
        if self.sigma < 0:
            raise AdlError("sigma must be >= 0")


def noise_threshold(sigma: float, n_atoms: int) -> float:
    """Gaussian maximal-inner-product bound tau = sigma * sqrt(2 ln 2K).

    The 2K counts both tails of each atom correlation; with ln K alone the
    threshold sits at the expected maximum and is exceeded about half the
    time on pure noise, which makes the pursuit overfit by an atom or two.
    """
    return float(sigma * np.sqrt(2.0 * np.log(max(2 * n_atoms, 2))))


def estimate_noise(patches: PatchMatrix) -> float:
    """Robust noise scale from the finest-detail patch coefficients.

    Each pixel is compared with the average of the remaining pixels of its
    patch; the median absolute deviation of those differences, rescaled to
    be unbiased for Gaussian noise, estimates sigma.
    """
    if patches.n_patches < 10:
        raise AdlError("need at least 10 patches to estimate noise")
    z = patches.columns
    d = patches.d
    centered = z - z.mean(axis=0, keepdims=True)
    detail = centered * (d / (d - 1.0))
    mad = np.median(np.abs(detail))
    return float(1.4826 * mad * np.sqrt((d - 1.0) / d))


def init_dictionary(patches: PatchMatrix, n_atoms: int, rng: np.random.Generator) -> Dictionary:
    """K randomly selected, mean-removed, l2-normalized patches as atoms.

    Flat patches (near-zero norm after mean removal) are skipped; if the data
    cannot supply enough distinct atoms the remainder is drawn Gaussian.
    """
    z = patches.columns
    norms = np.linalg.norm(z, axis=0)
    usable = np.flatnonzero(norms > 1e-10 * max(norms.max(), 1e-30))
    atoms = np.empty((patches.d, n_atoms))
    n_from_data = min(n_atoms, usable.size)
    if n_from_data > 0:
        pick = rng.choice(usable, size=n_from_data, replace=usable.size < n_from_data)
        atoms[:, :n_from_data] = z[:, pick] / norms[pick]
    if n_from_data < n_atoms:
        extra = rng.standard_normal((patches.d, n_atoms - n_from_data))
        atoms[:, n_from_data:] = extra / np.linalg.norm(extra, axis=0)
    return Dictionary(atoms)


def _threshold_and_code(z: np.ndarray, atoms: np.ndarray, s: int):
    """Thresholding step: select the s largest |<atom, z>| per patch and
    solve the least-squares coefficients on that support.

    Returns (sel (s, L), coeff (L, s), ip (K, L), residual (d, L)).
    """
    ip = atoms.T @ z
    absip = np.abs(ip)
    if s >= atoms.shape[1]:
        sel = np.tile(np.arange(atoms.shape[1])[:, None], (1, z.shape[1]))
        s = atoms.shape[1]
    else:
        sel = np.argpartition(absip, -s, axis=0)[-s:]
    gram = atoms.T @ atoms
    g_batch = gram[sel.T[:, :, None], sel.T[:, None, :]]  # (L, s, s)
    rhs = np.take_along_axis(ip, sel, axis=0).T  # (L, s)
    try:
        coeff = np.linalg.solve(g_batch, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        coeff = np.empty_like(rhs)
        for j in range(rhs.shape[0]):
            coeff[j] = np.linalg.lstsq(g_batch[j], rhs[j], rcond=None)[0]
    approx = np.zeros_like(z)
    for i in range(s):
        approx += atoms[:, sel[i]] * coeff[:, i]
    return sel, coeff, ip, z - approx


def _itkrm_core(z: np.ndarray, atoms: np.ndarray, s: int):
    """One ITKrM round plus the bookkeeping the adaptive wrapper needs.

    Returns (new_atoms, usage, residual). An atom counts as used by a patch
    only when its coefficient is significant against that patch's residual
    energy, so selections that merely chase noise do not keep atoms alive.
    """
    d, n = z.shape
    n_atoms = atoms.shape[1]
    s = min(s, n_atoms)
    sel, coeff, ip, res = _threshold_and_code(z, atoms, s)

    # K residual means: sum signed residuals of the selecting patches and
    # put back each atom's own contribution
    new_atoms = np.zeros_like(atoms)
    weight = np.zeros(n_atoms)
    selected = np.zeros(n_atoms)
    usage = np.zeros(n_atoms)
    signip = np.sign(np.take_along_axis(ip, sel, axis=0))
    absip_sel = np.abs(np.take_along_axis(ip, sel, axis=0))

    # per-patch significance level for "this atom is really used":
    # residual energy scaled by a log(number of observations) factor plus
    # the approximation energy spread over the patch dimension
    res_en = np.sum(res**2, axis=0)
    app_en = np.sum((z - res) ** 2, axis=0)
    sig2 = res_en * (2.0 * np.log(max(2.0 * n / d, 2.0)) / d) + app_en / d

    for i in range(sel.shape[0]):
        np.add.at(new_atoms.T, sel[i], (res * signip[i]).T)
        np.add.at(weight, sel[i], absip_sel[i])
        np.add.at(selected, sel[i], 1.0)
        significant = coeff[:, i] ** 2 > sig2
        np.add.at(usage, sel[i][significant], 1.0)
    new_atoms += atoms * weight[None, :]

    norms = np.linalg.norm(new_atoms, axis=0)
    updated = (selected > 0) & (norms > 1e-12)
    out = atoms.copy()
    out[:, updated] = new_atoms[:, updated] / norms[updated]
    usage[~updated] = 0.0
    return out, usage, res


def itkrm_step(patches: PatchMatrix, dictionary: Dictionary, s: int) -> Dictionary:
    """One iterative thresholding and K residual means update."""
    if patches.n_patches < 1:
        raise AdlError("empty patch matrix")
    if s < 1:
        raise AdlError("sparsity level must be >= 1")
    new_atoms, _, _ = _itkrm_core(patches.columns, dictionary.atoms, s)
    return Dictionary(new_atoms)


def _prune_coherent(atoms: np.ndarray, usage: np.ndarray, mu_max: float):
    """Remove the less-used atom of every pair with coherence above mu_max."""
    keep = np.ones(atoms.shape[1], dtype=bool)
    gram = np.abs(atoms.T @ atoms)
    np.fill_diagonal(gram, 0.0)
    while True:
        gram_live = np.where(np.outer(keep, keep), gram, 0.0)
        i, j = np.unravel_index(np.argmax(gram_live), gram.shape)
        if gram_live[i, j] <= mu_max:
            break
        drop = i if usage[i] < usage[j] else j
        keep[drop] = False
        if keep.sum() <= 1:
            break
    return atoms[:, keep], usage[keep]


def aitkrm(patches: PatchMatrix, state: AdlState, iters: int = 1) -> AdlState:
    """Adaptive ITKrM rounds: learn, prune, grow, re-estimate the sparsity.

    Each round runs one ITKrM update at the current sparsity level, merges
    coherent atoms, drops rarely used ones (never below k_min), appends
    normalized high-energy coding residuals as new atoms (never above k_max,
    and only when their energy clearly exceeds the noise floor), and adapts
    the sparsity level: it grows while every coefficient stays significant
    and the residuals still hold structure above the noise floor, and
    shrinks when coefficients turn insignificant.
    """
    if patches.n_patches < 1:
        raise AdlError("empty patch matrix")
    z = patches.columns
    d = patches.d
    consts = state.constants
    atoms = state.dictionary.atoms.copy()
    s_hat = state.s_hat
    sigma = state.sigma
    usage = state.usage.copy()
    rounds_at_level = state.rounds_at_level

    for _ in range(iters):
        atoms, usage, res = _itkrm_core(z, atoms, s_hat)

        atoms, usage = _prune_coherent(atoms, usage, consts.mu_max)

        # usage pruning: keep atoms significantly used by at least f_min of
        # the patches, but never shrink below k_min. Only prune while the
        # residuals sit at the noise floor: during transients with a still
        # undersized sparsity level the unexplained signal inflates the
        # significance bar and every atom would look unused.
        res_at_noise = (
            float(np.median(np.sum(res**2, axis=0))) <= 3.0 * d * sigma**2
        )
        k = atoms.shape[1]
        if res_at_noise and k > consts.k_min(d):
            min_count = consts.f_min_over_k / k * patches.n_patches
            order = np.argsort(usage, kind="stable")
            droppable = [idx for idx in order if usage[idx] < min_count]
            n_drop = min(len(droppable), max(0, k - consts.k_min(d)))
            if n_drop > 0:
                keep = np.ones(k, dtype=bool)
                keep[droppable[:n_drop]] = False
                atoms, usage = atoms[:, keep], usage[keep]

        # candidate atoms from the worst-approximated patches; a candidate
        # must clearly rise above both the noise floor and the bulk of the
        # residuals, otherwise churn from noise-shaped atoms never settles
        room = consts.k_max(d) - atoms.shape[1]
        if room > 0:
            res_norms = np.linalg.norm(res, axis=0)
            floor = max(
                consts.candidate_energy_factor * np.sqrt(d) * sigma,
                2.0 * float(np.median(res_norms)),
                1e-12,
            )
            worst = np.argsort(res_norms)[::-1][: consts.candidates_per_round(d)]
            added = []
            for j in worst:
                if res_norms[j] <= floor:
                    continue
                cand = res[:, j] / res_norms[j]
                pool = atoms if not added else np.column_stack([atoms] + added)
                if np.max(np.abs(pool.T @ cand)) < consts.mu_max:
                    added.append(cand[:, None])
                if len(added) >= room:
                    break
            if added:
                atoms = np.column_stack([atoms] + added)
                usage = np.concatenate([usage, np.zeros(len(added))])

        # sparsity level update: move one step toward the median support
        # size the noise-thresholded pursuit produces on a patch subsample
        # (the count of sequentially accepted coefficients above tau).
        # Growth is rate-limited so dictionary learning keeps pace while
        # the dictionary is still poor; shrinking is immediate.
        stride = max(1, patches.n_patches // 1024)
        probe = aomp_batch(z[:, ::stride], Dictionary(atoms), sigma, consts.s_cap(d))
        target = float(np.median(probe.sizes))
        rounds_at_level += 1
        if target > s_hat and rounds_at_level >= consts.s_grow_period:
            s_hat += 1
            rounds_at_level = 0
        elif target < s_hat:
            s_hat -= 1
            rounds_at_level = 0
        s_hat = int(np.clip(s_hat, 1, min(consts.s_cap(d), atoms.shape[1])))

    return AdlState(
        dictionary=Dictionary(atoms),
        sigma=sigma,
        s_hat=s_hat,
        usage=usage,
        constants=consts,
        rounds_at_level=rounds_at_level,
    )


def aomp_batch(
    z: np.ndarray,
    dictionary: Dictionary,
    sigma: float,
    s_max: int,
    means: np.ndarray | None = None,
) -> SparseCodeSet:
    """Orthogonal matching pursuit with noise-level stopping, over columns.

    Greedily adds the atom with the largest residual correlation and
    re-solves the least squares on the support until either no correlation
    exceeds tau = sigma * sqrt(2 ln K) (the residual looks like noise), the
    support reaches s_max, or the support Gram matrix turns singular, in
    which case the newest atom is dropped and that patch stops.
    """
    if sigma < 0 or s_max < 1:
        raise AdlError("sigma must be >= 0 and s_max >= 1")
    atoms = dictionary.atoms
    d, n = z.shape
    n_atoms = atoms.shape[1]
    s_max = min(s_max, d, n_atoms)
    tau = noise_threshold(sigma, n_atoms)
    gram = atoms.T @ atoms
    b0 = atoms.T @ z  # (K, L)
    # numerical stop floor: exact-span residuals never reach zero exactly
    tau_eff = np.maximum(tau, 1e-10 * np.linalg.norm(z, axis=0))

    sup = np.zeros((s_max, n), dtype=np.intp)
    coef = np.zeros((s_max, n))
    sizes = np.zeros(n, dtype=np.intp)
    corr = b0.copy()
    active = np.max(np.abs(corr), axis=0) > tau_eff

    for step in range(s_max):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pick = np.argmax(np.abs(corr[:, idx]), axis=0)

        # a re-picked atom signals a numerically singular support
        if step > 0:
            dup = np.any(sup[:step, idx] == pick[None, :], axis=0)
            if np.any(dup):
                active[idx[dup]] = False
                idx = idx[~dup]
                pick = pick[~dup]
                if idx.size == 0:
                    continue
        sup[step, idx] = pick
        s = step + 1

        sup_t = sup[:s, idx].T  # (n_act, s)
        g_batch = gram[sup_t[:, :, None], sup_t[:, None, :]]
        rhs = b0[sup_t, idx[:, None]]  # (n_act, s)
        try:
            chol = np.linalg.cholesky(g_batch)
        except np.linalg.LinAlgError:
            bad = np.zeros(idx.size, dtype=bool)
            for jj in range(idx.size):
                try:
                    np.linalg.cholesky(g_batch[jj])
                except np.linalg.LinAlgError:
                    bad[jj] = True
            active[idx[bad]] = False  # drop the newest atom and stop
            idx, sup_t, g_batch, rhs = idx[~bad], sup_t[~bad], g_batch[~bad], rhs[~bad]
            if idx.size == 0:
                continue
            chol = np.linalg.cholesky(g_batch)
        y = np.linalg.solve(chol, rhs[..., None])
        gamma = np.linalg.solve(np.swapaxes(chol, 1, 2), y)[..., 0]  # (n_act, s)

        coef[:s, idx] = gamma.T
        sizes[idx] = s

        # residual correlations without materializing residuals:
        # D^T r = b0 - gram[:, support] @ gamma
        corr_act = b0[:, idx].copy()
        for i in range(s):
            corr_act -= gram[:, sup[i, idx]] * gamma[None, :, i]
        corr[:, idx] = corr_act
        done = np.max(np.abs(corr_act), axis=0) <= tau_eff[idx]
        active[idx[done]] = False

    used = int(sizes.max()) if n else 0
    if means is None:
        means = np.zeros(n)
    return SparseCodeSet(sup[:used], coef[:used], sizes, means)


def aomp(
    z: np.ndarray, dictionary: Dictionary, sigma: float, s_max: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse-code a single vector; returns (support, coefficients)."""
    codes = aomp_batch(np.asarray(z, dtype=float).reshape(-1, 1), dictionary, sigma, s_max)
    return codes.per_patch(0)


def sparse_code_all(
    patch_sets: dict[str, PatchMatrix],
    states: dict[str, AdlState],
    chunk: int = 16384,
) -> dict[str, SparseCodeSet]:
    """Sparse-code every patch of every parameter with its own dictionary
    and noise level; patches are processed in chunks to bound memory."""
    out: dict[str, SparseCodeSet] = {}
    for name, pm in patch_sets.items():
        st = states[name]
        s_max = st.constants.s_cap(pm.d)
        parts = []
        for lo in range(0, pm.n_patches, chunk):
            hi = min(lo + chunk, pm.n_patches)
            parts.append(
                aomp_batch(pm.columns[:, lo:hi], st.dictionary, st.sigma, s_max,
                           means=pm.means[lo:hi])
            )
        if len(parts) == 1:
            out[name] = parts[0]
        else:
            s_used = max(p.support_slots.shape[0] for p in parts)
            sup = np.zeros((s_used, pm.n_patches), dtype=np.intp)
            coe = np.zeros((s_used, pm.n_patches))
            sizes = np.zeros(pm.n_patches, dtype=np.intp)
            pos = 0
            for p in parts:
                w = p.n_patches
                sup[: p.support_slots.shape[0], pos : pos + w] = p.support_slots
                coe[: p.coeff_slots.shape[0], pos : pos + w] = p.coeff_slots
                sizes[pos : pos + w] = p.sizes
                pos += w
            out[name] = SparseCodeSet(sup, coe, sizes, pm.means)
    return out


def save_dictionary_csv(dictionary: Dictionary, path) -> None:
    """One atom per column, plain CSV."""
    np.savetxt(path, dictionary.atoms, delimiter=",")


def load_dictionary_csv(path) -> Dictionary:
    atoms = np.loadtxt(path, delimiter=",")
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    return Dictionary(atoms)


def atom_mosaic(dictionary: Dictionary, patch_side: int, pad: int = 1) -> np.ndarray:
    """Grayscale uint8 mosaic of all atoms for visual inspection."""
    d, k = dictionary.atoms.shape
    if patch_side**2 != d:
        raise AdlError("patch_side inconsistent with atom length")
    n_cols = int(np.ceil(np.sqrt(k)))
    n_rows = int(np.ceil(k / n_cols))
    cell = patch_side + pad
    canvas = np.zeros((n_rows * cell + pad, n_cols * cell + pad))
    for i in range(k):
        atom = dictionary.atoms[:, i].reshape(patch_side, patch_side)
        lo, hi = atom.min(), atom.max()
        tile = (atom - lo) / (hi - lo) if hi > lo else np.full_like(atom, 0.5)
        r, c = divmod(i, n_cols)
        canvas[pad + r * cell : pad + r * cell + patch_side,
               pad + c * cell : pad + c * cell + patch_side] = tile
    return np.round(canvas * 255).astype(np.uint8)
