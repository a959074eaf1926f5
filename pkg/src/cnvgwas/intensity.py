"""CNV calling from LRR/BAF intensity tracks.

Two callers are provided: a genome-scanning five-state HMM (copy number
0-4) that segments one sample at a time, and a known-region caller that
fits a Gaussian mixture to per-sample mean LRR across many samples.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numba
import numpy as np
from scipy import ndimage
from scipy.special import logsumexp
from scipy.stats import binom

from .core import (
    BASELINE_STATE,
    N_STATES,
    CnvCall,
    IntensityTrack,
    SnpPanel,
    ValidationError,
    state_segments,
)

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True)
class HmmSpec:
    """Parameters of the copy-number HMM.

    ``leave_weights`` split the baseline exit probability among states
    0, 1, 3, 4 (entry for state 2 ignored).  ``expected_cnvs`` is the prior
    number of CNVs per sample over the whole panel and sets the exit rate;
    the chance of returning to baseline between markers a distance D apart
    is 1 - exp(-D / expected_length).
    """

    lrr_mean: tuple = (-3.5, -0.66, 0.0, 0.4, 0.75)
    lrr_sd: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    baf_sd: float = 0.03
    lrr_outlier: float = 1e-3
    baf_outlier: float = 1e-2
    lrr_range: float = 8.0
    expected_length: float = 50_000.0
    expected_cnvs: float = 30.0
    leave_weights: tuple = (0.05, 0.45, 0.0, 0.4, 0.1)

    def __post_init__(self):
        if len(self.lrr_mean) != N_STATES or len(self.lrr_sd) != N_STATES:
            raise ValidationError("one LRR mean and sd per copy state is required")
        if min(self.lrr_sd) <= 0 or self.baf_sd <= 0:
            raise ValidationError("emission standard deviations must be positive")
        if self.expected_length <= 0 or self.expected_cnvs <= 0:
            raise ValidationError("expected CNV length and count must be positive")

    def _weights(self):
        w = np.asarray(self.leave_weights, dtype=float).copy()
        w[BASELINE_STATE] = 0.0
        return w / w.sum()

    def transition(self, distance: float, leave_rate: float) -> np.ndarray:
        """Transition matrix between two markers ``distance`` bp apart."""
        back = -np.expm1(-distance / self.expected_length)
        leave = -np.expm1(-distance * leave_rate)
        A = np.diag(np.full(N_STATES, 1.0 - back))
        A[:, BASELINE_STATE] = back
        A[BASELINE_STATE] = leave * self._weights()
        A[BASELINE_STATE, BASELINE_STATE] = 1.0 - leave
        return A

    def initial(self, spacing: float, leave_rate: float) -> np.ndarray:
        """Stationary distribution of :meth:`transition` at a typical marker spacing."""
        back = -np.expm1(-spacing / self.expected_length)
        leave = -np.expm1(-spacing * leave_rate)
        pi = leave * self._weights() / back
        pi[BASELINE_STATE] = 1.0
        return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class _PanelModel:
    log_trans: np.ndarray  # (m, S, S); row block i is the step into marker i
    log_init: np.ndarray
    baf_weights: tuple  # per copy state c >= 1: (m, c + 1) cluster weights
    chrom_starts: tuple


@lru_cache(maxsize=8)
def _panel_model(spec: HmmSpec, panel: SnpPanel) -> _PanelModel:
    pos = np.asarray(panel.positions, dtype=float)
    slices = panel.chromosome_slices()
    span = sum(max(pos[s.stop - 1] - pos[s.start], 1.0) for s in slices)
    rate = spec.expected_cnvs / span
    m = len(panel)
    gaps = np.diff(pos)
    same = np.diff(np.asarray(panel.chrom_codes)) == 0
    typical = float(np.median(gaps[same])) if same.any() else spec.expected_length
    init = spec.initial(typical, rate)
    log_init = np.log(init)
    log_trans = np.empty((m, N_STATES, N_STATES))
    log_trans[:] = log_init  # chromosome starts restart from the initial distribution
    idx = np.flatnonzero(same) + 1
    d = np.maximum(gaps[idx - 1], 1.0)
    back = -np.expm1(-d / spec.expected_length)
    leave = -np.expm1(-d * rate)
    A = np.zeros((idx.size, N_STATES, N_STATES))
    diag = np.arange(N_STATES)
    A[:, diag, diag] = (1.0 - back)[:, None]
    A[:, :, BASELINE_STATE] = back[:, None]
    A[:, BASELINE_STATE, :] = leave[:, None] * spec._weights()[None, :]
    A[:, BASELINE_STATE, BASELINE_STATE] = 1.0 - leave
    with np.errstate(divide="ignore"):
        log_trans[idx] = np.log(A)
    maf = np.asarray(panel.maf, dtype=float)
    baf_w = tuple(binom.pmf(np.arange(c + 1)[None, :], c, maf[:, None]) for c in range(1, N_STATES))
    return _PanelModel(log_trans, log_init, baf_w, tuple(s.start for s in slices))


def emission_loglik(track: IntensityTrack, panel: SnpPanel, spec: HmmSpec) -> np.ndarray:
    """(markers, states) log emission densities for LRR and BAF jointly.

    BAF clusters for copy state c sit at j/c with genotype weights
    Binomial(c, maf); a homozygous deletion has uniform BAF.  Missing LRR or
    BAF contributes nothing.
    """
    model = _panel_model(spec, panel)
    lrr = np.asarray(track.lrr)
    baf = np.asarray(track.baf)
    m = lrr.size
    if m != len(panel):
        raise ValidationError(f"{track.sample_id}: track has {m} markers, panel {len(panel)}")
    mu = np.asarray(spec.lrr_mean)
    sd = np.asarray(spec.lrr_sd)
    z = (lrr[:, None] - mu[None, :]) / sd[None, :]
    ln_norm = -0.5 * z * z - np.log(sd)[None, :] - _LOG_SQRT_2PI
    with np.errstate(invalid="ignore"):
        out = np.logaddexp(np.log1p(-spec.lrr_outlier) + ln_norm,
                           np.log(spec.lrr_outlier / spec.lrr_range))
    out[np.isnan(lrr)] = 0.0

    b = np.where(np.isnan(baf), 0.5, baf)
    ln_u = np.log(spec.baf_outlier)
    for c in range(1, N_STATES):
        centers = np.arange(c + 1) / c
        zb = (b[:, None] - centers[None, :]) / spec.baf_sd
        dens = (model.baf_weights[c - 1] * np.exp(-0.5 * zb * zb)).sum(axis=1)
        dens /= spec.baf_sd * np.sqrt(2 * np.pi)
        ln_b = np.logaddexp(np.log1p(-spec.baf_outlier) + np.log(np.maximum(dens, 1e-300)), ln_u)
        out[:, c] += np.where(np.isnan(baf), 0.0, ln_b)
    return out


@numba.njit(cache=True, nogil=True)
def _viterbi(log_e, log_t, log_init):
    m, S = log_e.shape
    score = np.empty((m, S))
    back = np.zeros((m, S), dtype=np.int64)
    for s in range(S):
        score[0, s] = log_init[s] + log_e[0, s]
    for i in range(1, m):
        for j in range(S):
            best = -np.inf
            arg = BASELINE_STATE
            for k in range(S):
                v = score[i - 1, k] + log_t[i, k, j]
                # ties resolve toward the baseline state
                if v > best or (v == best and k == BASELINE_STATE):
                    best = v
                    arg = k
            score[i, j] = best + log_e[i, j]
            back[i, j] = arg
    path = np.empty(m, dtype=np.int64)
    best = -np.inf
    arg = BASELINE_STATE
    for s in range(S):
        v = score[m - 1, s]
        if v > best or (v == best and s == BASELINE_STATE):
            best = v
            arg = s
    path[m - 1] = arg
    for i in range(m - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path, best


@numba.njit(cache=True, nogil=True)
def _lse(v):
    mx = -np.inf
    for x in v:
        if x > mx:
            mx = x
    if mx == -np.inf:
        return mx
    s = 0.0
    for x in v:
        s += np.exp(x - mx)
    return mx + np.log(s)


@numba.njit(cache=True, nogil=True)
def _forward_backward(log_e, log_t, log_init):
    m, S = log_e.shape
    fwd = np.empty((m, S))
    bwd = np.zeros((m, S))
    tmp = np.empty(S)
    for s in range(S):
        fwd[0, s] = log_init[s] + log_e[0, s]
    for i in range(1, m):
        for j in range(S):
            for k in range(S):
                tmp[k] = fwd[i - 1, k] + log_t[i, k, j]
            fwd[i, j] = _lse(tmp) + log_e[i, j]
    for i in range(m - 2, -1, -1):
        for k in range(S):
            for j in range(S):
                tmp[j] = log_t[i + 1, k, j] + log_e[i + 1, j] + bwd[i + 1, j]
            bwd[i, k] = _lse(tmp)
    loglik = _lse(fwd[m - 1])
    post = np.empty((m, S))
    for i in range(m):
        for s in range(S):
            tmp[s] = fwd[i, s] + bwd[i, s]
        z = _lse(tmp)
        for s in range(S):
            post[i, s] = np.exp(tmp[s] - z)
    return post, loglik


def viterbi(log_e, log_t, log_init):
    """Most probable state path and its joint log-probability.

    ``log_t[i]`` is the transition matrix into marker i (``log_t[0]`` unused).
    """
    log_e = np.ascontiguousarray(log_e, dtype=float)
    return _viterbi(log_e, np.ascontiguousarray(log_t, dtype=float), np.asarray(log_init, dtype=float))


def forward_backward(log_e, log_t, log_init):
    """Per-marker posterior state probabilities and the total log-likelihood."""
    log_e = np.ascontiguousarray(log_e, dtype=float)
    return _forward_backward(log_e, np.ascontiguousarray(log_t, dtype=float), np.asarray(log_init, dtype=float))


def path_logprob(path, log_e, log_t, log_init) -> float:
    path = np.asarray(path)
    lp = log_init[path[0]] + log_e[0, path[0]]
    for i in range(1, len(path)):
        lp += log_t[i, path[i - 1], path[i]] + log_e[i, path[i]]
    return float(lp)


def detrend(lrr: np.ndarray, window: int = 201) -> np.ndarray:
    """Subtract a running median to remove wave-like drift."""
    lrr = np.asarray(lrr, dtype=float)
    filled = np.where(np.isnan(lrr), np.nanmedian(lrr), lrr)
    return lrr - ndimage.median_filter(filled, size=window, mode="nearest")


def normalize_track(track: IntensityTrack, scale: bool = False) -> IntensityTrack:
    """Median-centre a sample's LRR, optionally scaling to unit MAD-based sd."""
    lrr = np.asarray(track.lrr) - np.nanmedian(track.lrr)
    if scale:
        mad = np.nanmedian(np.abs(lrr)) * 1.4826
        if mad > 0:
            lrr = lrr / mad
    return IntensityTrack(track.sample_id, lrr, track.baf)


@dataclass(frozen=True, eq=False)
class Segmentation:
    calls: list
    path: np.ndarray
    posterior: np.ndarray
    loglik: float


def hmm_decode(track: IntensityTrack, panel: SnpPanel, spec: HmmSpec | None = None,
               detrend_window: int | None = None) -> Segmentation | None:
    """Viterbi path, posteriors and calls for one track; None if all LRR is missing."""
    spec = spec or HmmSpec()
    if np.all(np.isnan(track.lrr)):
        log.warning("%s: all LRR values missing, no segmentation", track.sample_id)
        return None
    if detrend_window:
        track = IntensityTrack(track.sample_id, detrend(track.lrr, detrend_window), track.baf)
    model = _panel_model(spec, panel)
    log_e = emission_loglik(track, panel, spec)
    path, _ = _viterbi(log_e, model.log_trans, model.log_init)
    post, ll = _forward_backward(log_e, model.log_trans, model.log_init)
    calls = [CnvCall(track.sample_id, s, e, state, float(np.clip(post[s:e + 1, state].mean(), 0, 1)), "hmm")
             for s, e, state in state_segments(path, breaks=model.chrom_starts)]
    return Segmentation(calls, path, post, float(ll))


def hmm_segment(track: IntensityTrack, panel: SnpPanel, spec: HmmSpec | None = None,
                detrend_window: int | None = None) -> list[CnvCall]:
    """Copy-number calls for one sample.

    Each maximal non-baseline run of the Viterbi path becomes a call whose
    confidence is the mean posterior of the called state over the run.
    """
    seg = hmm_decode(track, panel, spec, detrend_window)
    return [] if seg is None else seg.calls


def segment_tracks(tracks: Sequence[IntensityTrack], panel: SnpPanel, spec: HmmSpec | None = None,
                   detrend_window: int | None = None, threads: int = 1) -> list[CnvCall]:
    """:func:`hmm_segment` over many samples; output sorted, independent of ``threads``."""
    spec = spec or HmmSpec()
    _panel_model(spec, panel)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda t: hmm_segment(t, panel, spec, detrend_window), tracks))
    else:
        parts = [hmm_segment(t, panel, spec, detrend_window) for t in tracks]
    return sorted(c for part in parts for c in part)


@dataclass(frozen=True, eq=False)
class RegionMixtureFit:
    """Gaussian mixture over per-sample mean LRR in one region.

    Component s models copy state s.  ``active`` marks components that kept
    non-negligible weight; inactive ones have weight 0 in ``weights`` and in
    the posteriors.
    """

    sample_ids: tuple
    summary: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    weights: np.ndarray
    posterior: np.ndarray
    active: np.ndarray
    converged: bool
    n_iter: int
    loglik_trace: list = field(default_factory=list)

    @property
    def calls(self) -> np.ndarray:
        """Hard copy-state calls; ties go to the baseline state."""
        return _argmax_baseline(self.posterior)

    @property
    def confidence(self) -> np.ndarray:
        return self.posterior[np.arange(len(self.summary)), self.calls]

    @property
    def carrier_prob(self) -> np.ndarray:
        return 1.0 - self.posterior[:, BASELINE_STATE]


def _argmax_baseline(post):
    best = post.max(axis=1, keepdims=True)
    out = np.argmax(post, axis=1)
    tie = post[:, BASELINE_STATE] >= best[:, 0]
    out[tie] = BASELINE_STATE
    return out


def _mixture_loglik(x, means, sd, weights):
    with np.errstate(divide="ignore"):
        lw = np.log(weights)
    z = (x[:, None] - means[None, :]) / sd
    comp = lw[None, :] - 0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI
    tot = logsumexp(comp, axis=1)
    return comp, tot


def fit_region_mixture(summary, anchors=None, max_iter: int = 500, tol: float = 1e-10,
                       min_weight: float | None = None, sample_ids=None) -> RegionMixtureFit:
    """EM for a tied-variance Gaussian mixture with components started at ``anchors``.

    A component's mean is only updated once it holds at least two samples'
    worth of responsibility, so empty states stay at their anchors.
    Components whose weight ends below ``min_weight`` (default 1/(2n)) are
    switched off before the final posteriors are computed.
    """
    x = np.asarray(summary, dtype=float)
    n = x.size
    anchors = np.asarray(HmmSpec().lrr_mean if anchors is None else anchors, dtype=float)
    K = anchors.size
    spread = anchors.max() - anchors.min()
    sd_floor = 1e-4 * spread
    means = anchors.copy()
    nearest = np.abs(x[:, None] - anchors[None, :]).min(axis=1)
    sd = max(1.4826 * np.median(nearest), 0.05 * spread / K, sd_floor)
    weights = np.full(K, 1.0 / K)
    min_weight = 0.5 / n if min_weight is None else min_weight

    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        comp, tot = _mixture_loglik(x, means, sd, weights)
        trace.append(float(tot.sum()))
        resp = np.exp(comp - tot[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        upd = nk >= 2.0
        means = np.where(upd, (resp * x[:, None]).sum(axis=0) / np.maximum(nk, 1e-300), means)
        sd = max(np.sqrt((resp * (x[:, None] - means[None, :]) ** 2).sum() / n), sd_floor)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    if not converged:
        log.warning("region mixture EM did not converge in %d iterations", max_iter)
    active = weights >= min_weight
    weights = np.where(active, weights, 0.0)
    weights /= weights.sum()
    comp, tot = _mixture_loglik(x, means, sd, weights)
    post = np.exp(comp - tot[:, None])
    post /= post.sum(axis=1, keepdims=True)
    ids = tuple(sample_ids) if sample_ids is not None else tuple(str(i) for i in range(n))
    return RegionMixtureFit(ids, x, means, np.full(K, sd), weights, post, active, converged, it, trace)


def region_summary(tracks: Sequence[IntensityTrack], start: int, end: int) -> np.ndarray:
    return np.array([np.nanmean(np.asarray(t.lrr)[start:end + 1]) for t in tracks])


def region_call(tracks: Sequence[IntensityTrack], start: int, end: int, anchors=None,
                min_samples: int = 50, **kwargs) -> RegionMixtureFit:
    """Copy-state posteriors for every sample at a known region ``start..end`` (inclusive)."""
    if len(tracks) < min_samples:
        raise ValidationError(f"region calling needs at least {min_samples} samples, got {len(tracks)}")
    if start > end:
        raise ValidationError("region must cover at least one marker")
    return fit_region_mixture(region_summary(tracks, start, end), anchors,
                              sample_ids=[t.sample_id for t in tracks], **kwargs)


def region_calls(fit: RegionMixtureFit, start: int, end: int, source: str = "region") -> list[CnvCall]:
    """Non-baseline hard calls from a region fit as :class:`CnvCall` objects."""
    return [CnvCall(sid, start, end, int(state), float(conf), source)
            for sid, state, conf in zip(fit.sample_ids, fit.calls, fit.confidence)
            if state != BASELINE_STATE]


def posterior_weighted_counts(fit: RegionMixtureFit, is_case) -> np.ndarray:
    """Expected carrier counts as a 2x2 table.

    Rows are cases then controls; columns carriers then non-carriers.  A
    sample's carrier weight is its posterior mass off the baseline state.
    """
    is_case = np.asarray(is_case, dtype=bool)
    if is_case.size != fit.posterior.shape[0]:
        raise ValidationError("case labels must cover every sample in the fit")
    w = fit.carrier_prob
    return np.array([[w[is_case].sum(), (1 - w[is_case]).sum()],
                     [w[~is_case].sum(), (1 - w[~is_case]).sum()]])


def hard_call_counts(fit: RegionMixtureFit, is_case) -> np.ndarray:
    is_case = np.asarray(is_case, dtype=bool)
    carrier = fit.calls != BASELINE_STATE
    return np.array([[np.sum(carrier & is_case), np.sum(~carrier & is_case)],
                     [np.sum(carrier & ~is_case), np.sum(~carrier & ~is_case)]], dtype=float)
