"""Experiment sequencer: interrogation trials, heralded readout, multiplexing.

One ensemble load runs MOT loading, molasses and optical pumping, then an
interrogation train of write trials.  A trial with no write click ends in
a cleaning stage that resets the memory; a write click heralds a stored
spin-wave, triggers the gradient reversal after a fixed latency and
schedules the read pulse at the programmed delay, ending the
interrogation of that ensemble.

Two execution paths produce identical statistics:

* a vectorised engine for curve/scan statistics, exact because with
  perfect cleaning trials are independent, so the number of heralds in a
  batch is Binomial(trials, p_click) and only heralded trials need their
  readout sampled;
* an event-level path that walks ensembles trial by trial, emits
  TrialRecord / detection-record streams, models the wall clock and
  supports imperfect cleaning.

The gradient timeline of a trial is anchored to the trial's first write
slot: the reversal instruction fires ``reversal_latency`` after it.  A
spin-wave written at slot offset d therefore rephases when the gradient
area returns to its value at d, which is earlier for later slots; this
reproduces the inverted peak order of time-multiplexed writes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis_io import Channel, TICK_SECONDS, make_records
from .errors import (
    InvalidParameterError,
    SimulationBudgetError,
)
from .photon_stats import (
    CoincidenceStats,
    DetectionChain,
    EmissionModel,
    NoiseModel,
    HeraldTables,
    herald_tables,
)
from .physics import (
    ClassMixture,
    EnsembleModel,
    GradientWaveform,
    SpinWaveMode,
    retrieval_efficiency_curve,
    sample_ensemble,
    solve_rephasing_time,
)
from .rng import stream

# Cap on heralded trials materialised per batch (memory bound).
_MAX_HERALDS_PER_BATCH = 2_000_000


@dataclass(frozen=True)
class SequenceConfig:
    """Timing of one ensemble cycle (defaults follow the experiment)."""

    mot_load: float = 15e-3
    molasses: float = 1.6e-3
    pumping: float = 10e-6
    interrogation_max: float = 660e-6
    max_trials: int = 200
    trial_period: float = 1.7e-6
    reversal_latency: float = 3e-6  # write slot -> reversal instruction
    readout_delay: float = 20.84e-6  # write slot -> read pulse (programmable)
    repetition_rate: float = 59.0  # Hz, ensemble load rate
    residual_excitation: float = 0.0  # cleaning survival probability
    read_duration: float = 0.0  # boxcar convolution of the readout, s
    rephasing_time_jitter: float = 0.0  # per-ensemble sigma of the echo time, s

    def __post_init__(self):
        for name in ("mot_load", "molasses", "pumping", "interrogation_max",
                     "trial_period", "reversal_latency", "repetition_rate"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.max_trials < 1:
            raise InvalidParameterError("max_trials must be >= 1")
        if self.max_trials * self.trial_period > self.interrogation_max + 1e-15:
            raise InvalidParameterError(
                "max_trials * trial_period must not exceed interrogation_max")
        if not (0.0 <= self.residual_excitation < 1.0):
            raise InvalidParameterError("residual_excitation must be in [0, 1)")
        if self.read_duration < 0 or self.rephasing_time_jitter < 0:
            raise InvalidParameterError("durations must be >= 0")

    @property
    def overhead(self) -> float:
        return self.mot_load + self.molasses + self.pumping

    def ensemble_period(self, trials_used: int, heralded: bool,
                        readout_delay: float | None = None) -> float:
        """Wall-clock length of one ensemble cycle.

        The cycle is padded to the repetition period when the
        interrogation ends early; a late herald with a long readout can
        run over.
        """
        used = (trials_used - 1) * self.trial_period if heralded \
            else self.max_trials * self.trial_period
        if heralded:
            used += (self.readout_delay if readout_delay is None else readout_delay)
            used += self.trial_period  # cleanup/readout slot
        return max(1.0 / self.repetition_rate, self.overhead + used)


@dataclass(frozen=True)
class MultiplexPlan:
    """Write-slot offsets within a trial and the readout times to scan."""

    write_offsets: tuple[float, ...]
    readout_scan: tuple[float, ...] = ()

    def __post_init__(self):
        offs = tuple(float(x) for x in self.write_offsets)
        if len(offs) < 1:
            raise InvalidParameterError("at least one write offset is required")
        if any(x < 0 for x in offs) or np.any(np.diff(offs) <= 0):
            raise InvalidParameterError("write offsets must be >= 0 and strictly increasing")
        object.__setattr__(self, "write_offsets", offs)
        object.__setattr__(self, "readout_scan",
                           tuple(float(x) for x in self.readout_scan))


@dataclass
class TrialRecord:
    """Event-level log of one interrogation trial."""

    ensemble_id: int
    trial_index: int
    write_times: list
    write_clicks: list  # (time, "w")
    read_clicks: list  # (time, "r1" | "r2")
    gradient_events: list  # (time, action)
    cleaning_time: float | None = None

    @property
    def heralded(self) -> bool:
        return len(self.write_clicks) > 0


@dataclass
class EfficiencyCurve:
    """Retrieval efficiency versus readout time with counting errors."""

    times: np.ndarray
    eta: np.ndarray
    err: np.ndarray
    n_w: np.ndarray
    n_wr: np.ndarray
    trials: np.ndarray
    stats: list = field(default_factory=list)  # CoincidenceStats per point

    CSV_COLUMNS = ("time_s", "eta_ret", "eta_err", "heralds", "coincidences",
                   "trials", "p_w_hat")

    def rows(self):
        for i in range(len(self.times)):
            pw = self.n_w[i] / self.trials[i] if self.trials[i] else math.nan
            yield (self.times[i], self.eta[i], self.err[i], int(self.n_w[i]),
                   int(self.n_wr[i]), int(self.trials[i]), pw)


@dataclass
class AlphaPoint:
    target_pw: float
    excitation_probability: float
    stats: CoincidenceStats
    alpha: float
    alpha_err: float


@dataclass
class MultiplexResult:
    plan: MultiplexPlan
    peak_times: tuple[float, ...]
    scan_times: np.ndarray
    combined_pairs: np.ndarray  # (n_offsets, n_scan) coincidence probs per write
    combined_pair_errs: np.ndarray
    combined_curve: EfficiencyCurve
    independent_curves: list  # EfficiencyCurve per write (own pairs only)
    selectivities: np.ndarray  # (n_peaks, n_offsets) S(i) read at each peak
    mean_selectivity: float
    selectivity_err: float


def selectivity(peak_probs) -> list[float]:
    """Relative weight S(i) = p_i / sum_k p_k of each rephasing peak."""
    p = np.asarray(peak_probs, dtype=float)
    if p.size < 1:
        raise InvalidParameterError("at least one peak bin is required")
    if np.any(p < 0):
        raise InvalidParameterError("peak probabilities must be >= 0")
    total = p.sum()
    if total == 0:
        raise InvalidParameterError("all peak probabilities are zero")
    return list(p / total)


class EtaTable:
    """Physics retrieval efficiency tabulated on a time grid (linear interp)."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


class Experiment:
    """All models of one run plus the seeded execution engine."""

    def __init__(self, ensemble_model: EnsembleModel, mode0: SpinWaveMode,
                 waveform: GradientWaveform | None, mixture: ClassMixture,
                 emission: EmissionModel, chain: DetectionChain,
                 noise: NoiseModel, sequence: SequenceConfig,
                 eta0: float, extrinsic_lifetime: float = math.inf,
                 seed: int = 0, moving_zeeman: bool = False,
                 grid_step: float = 10e-9, max_trials_per_point: int = 10**12):
        self.ensemble_model = ensemble_model
        self.mode0 = mode0
        self.waveform = waveform
        self.mixture = mixture
        self.emission = emission
        self.chain = chain
        self.noise = noise
        self.sequence = sequence
        self.eta0 = eta0
        self.extrinsic_lifetime = extrinsic_lifetime
        self.seed = seed
        self.moving_zeeman = moving_zeeman
        self.grid_step = grid_step
        self.max_trials_per_point = int(max_trials_per_point)
        self._ensemble = None
        self._tables: HeraldTables | None = None

    # -- shared ingredients -------------------------------------------------

    @property
    def ensemble(self):
        if self._ensemble is None:
            self._ensemble = sample_ensemble(self.ensemble_model)
        return self._ensemble

    @property
    def tables(self) -> HeraldTables:
        if self._tables is None:
            self._tables = herald_tables(self.emission, self.chain)
        return self._tables

    @property
    def gradient_on(self) -> bool:
        return self.waveform is not None

    def _zero_waveform(self) -> GradientWaveform:
        return GradientWaveform.constant(0.0, gamma_eff=0.0)

    def mode_at(self, creation_time: float) -> SpinWaveMode:
        return SpinWaveMode(self.mode0.delta_k, creation_time=creation_time)

    def rephasing_time(self, creation_time: float = 0.0) -> float:
        if not self.gradient_on:
            raise InvalidParameterError("rephasing time needs the gradient enabled")
        window = (self.sequence.reversal_latency, self.sequence.interrogation_max)
        return solve_rephasing_time(self.waveform, window, creation_time=creation_time)

    def physics_eta(self, times, creation_time: float = 0.0) -> np.ndarray:
        """Exact conversion probability eta0 * overlap * extrinsic decay."""
        wf = self.waveform if self.gradient_on else self._zero_waveform()
        return retrieval_efficiency_curve(
            self.ensemble, self.mode_at(creation_time), wf, self.mixture,
            np.atleast_1d(np.asarray(times, dtype=float)), self.eta0,
            motional_lifetime=self.extrinsic_lifetime,
            moving_zeeman=self.moving_zeeman)

    def eta_table(self, t_lo: float, t_hi: float, creation_time: float = 0.0) -> EtaTable:
        """Tabulated eta over [t_lo, t_hi] plus jitter and read-pulse margins."""
        pad = 6.0 * self.sequence.rephasing_time_jitter + self.sequence.read_duration
        lo = max(creation_time, t_lo - pad)
        hi = t_hi + pad
        n = max(2, int(math.ceil((hi - lo) / self.grid_step)) + 1)
        grid = np.linspace(lo, hi, n)
        values = self.physics_eta(grid, creation_time)
        if self.sequence.read_duration > 0:
            # boxcar average over the read-pulse duration
            width = max(1, int(round(self.sequence.read_duration / self.grid_step)))
            kernel = np.ones(width) / width
            values = np.convolve(values, kernel, mode="same")
        return EtaTable(grid, values)

    def expected_pw(self, n_writes: int = 1) -> float:
        """Expected per-trial write-click probability times the write count.

        Feeds the read-noise background law: noise scales with the total
        excitation sent into the ensemble per trial.
        """
        return n_writes * self.tables.p_click

    # -- vectorised statistics engine ----------------------------------------

    def _point_stream(self, label: str, index: int):
        batch = [0]

        def next_rng():
            rng = stream(self.seed, label, index, batch=batch[0])
            batch[0] += 1
            return rng

        return next_rng

    def _sample_reads(self, rng, n_excitations, eta_values, noise_q):
        photons = rng.binomial(n_excitations, eta_values)
        surviving = rng.binomial(photons, self.chain.arm_efficiency)
        s = self.chain.read_splitter_ratio
        k1 = rng.binomial(surviving, s)
        k2 = surviving - k1
        q1 = noise_q * s + self.chain.dark_click_prob
        q2 = noise_q * (1.0 - s) + self.chain.dark_click_prob
        size = n_excitations.shape
        r1 = (k1 > 0) | (rng.random(size) < q1)
        r2 = (k2 > 0) | (rng.random(size) < q2)
        return r1, r2

    def _jitter(self, rng, size):
        sj = self.sequence.rephasing_time_jitter
        if sj > 0 and self.gradient_on:
            return rng.normal(0.0, sj, size)
        return np.zeros(size)

    def simulate_point(self, t_read: float, eta: EtaTable, label: str,
                       index: int, target_heralds: int | None = None,
                       trials_budget: int | None = None) -> CoincidenceStats:
        """Monte Carlo coincidence statistics of one readout time.

        Runs trials until ``target_heralds`` write clicks (or exactly
        ``trials_budget`` trials when given).  Because trials are
        independent, the herald count per batch is drawn as a binomial
        and only heralded trials are materialised.
        """
        next_rng = self._point_stream(label, index)
        p_click = self.tables.p_click
        noise_q = self.noise.read_noise_prob(self.expected_pw())
        totals = CoincidenceStats()
        trials_done = 0
        hard_budget = trials_budget if trials_budget is not None else self.max_trials_per_point
        while True:
            if target_heralds is not None and totals.n_w >= target_heralds:
                break
            if trials_budget is not None and trials_done >= trials_budget:
                break
            if trials_done >= hard_budget:
                raise SimulationBudgetError(
                    f"budget of {hard_budget} trials exhausted with "
                    f"{totals.n_w} heralds (target {target_heralds})")
            remaining = hard_budget - trials_done
            if p_click <= 0.0:
                bt = remaining
            elif target_heralds is not None:
                want = max(target_heralds - totals.n_w, 1)
                bt = int(min(remaining, math.ceil(1.15 * want / p_click) + 1000,
                             _MAX_HERALDS_PER_BATCH / p_click))
            else:
                bt = int(min(remaining, _MAX_HERALDS_PER_BATCH / p_click))
            bt = max(bt, 1)
            rng = next_rng()
            heralds = int(rng.binomial(bt, p_click))
            if heralds:
                n = self.tables.sample_given_click(rng, heralds)
                delta = self._jitter(rng, heralds)
                eta_values = eta(t_read - delta)
                r1, r2 = self._sample_reads(rng, n, eta_values, noise_q)
                batch_stats = CoincidenceStats.from_arrays(
                    bt, np.ones(heralds, bool), r1, r2)
            else:
                batch_stats = CoincidenceStats(trials=bt)
            totals = totals.merge(batch_stats)
            trials_done += bt
            if target_heralds is None and trials_budget is None:
                break
        return totals

    def _curve(self, scan_times, target_heralds, label, eta_for_point) -> EfficiencyCurve:
        scan_times = np.asarray(scan_times, dtype=float)
        stats = []
        for i, t in enumerate(scan_times):
            stats.append(self.simulate_point(t, eta_for_point(t), label, i,
                                             target_heralds=target_heralds))
        eta = np.array([s.eta_ret if s.eta_ret_defined else math.nan for s in stats])
        err = np.array([s.eta_ret_err if s.eta_ret_defined else math.nan for s in stats])
        return EfficiencyCurve(
            times=scan_times, eta=eta, err=err,
            n_w=np.array([s.n_w for s in stats]),
            n_wr=np.array([s.n_wr for s in stats]),
            trials=np.array([s.trials for s in stats]),
            stats=stats)

    def run_standard_dlcz(self, storage_times, target_heralds: int = 10_000) -> EfficiencyCurve:
        """No-gradient reference: eta_ret versus storage time."""
        if self.gradient_on:
            raise InvalidParameterError(
                "standard DLCZ runs with the gradient disabled; build the "
                "experiment without a waveform")
        self._check_interrogation_fits(max(storage_times))
        times = np.asarray(storage_times, dtype=float)
        table = EtaTable(times, self.physics_eta(times))
        return self._curve(times, target_heralds, "standard", lambda t: table)

    def run_rephasing(self, readout_scan, target_heralds: int = 10_000) -> EfficiencyCurve:
        """Gradient on: dephased background, then the controlled echo."""
        if not self.gradient_on:
            raise InvalidParameterError("rephasing run needs the gradient enabled")
        scan = np.asarray(readout_scan, dtype=float)
        self._check_interrogation_fits(scan.max())
        table = self.eta_table(scan.min(), scan.max())
        return self._curve(scan, target_heralds, "rephase", lambda t: table)

    def _check_interrogation_fits(self, max_readout: float):
        seq = self.sequence
        worst = (seq.max_trials - 1) * seq.trial_period + max_readout
        if worst > seq.interrogation_max:
            raise InvalidParameterError(
                f"readout delay {max_readout} cannot fit the interrogation "
                f"window for a last-trial herald")

    # -- multiplexed writes ---------------------------------------------------

    def _multiplex_tables(self, plan: MultiplexPlan, t_lo, t_hi):
        return [self.eta_table(t_lo, t_hi, creation_time=off)
                for off in plan.write_offsets]

    def simulate_multiplex_point(self, t_read: float, plan: MultiplexPlan,
                                 tables: list, label: str, index: int,
                                 target_heralds: int) -> tuple[CoincidenceStats, np.ndarray]:
        """Combined-run statistics at one readout time.

        Returns trial-level stats plus per-write coincidence counts
        (write_i click AND any read click).
        """
        n_off = len(plan.write_offsets)
        p_click = self.tables.p_click
        p_any = 1.0 - (1.0 - p_click) ** n_off
        noise_q = self.noise.read_noise_prob(self.expected_pw(n_off))
        next_rng = self._point_stream(label, index)
        totals = CoincidenceStats()
        pair_counts = np.zeros(n_off, dtype=np.int64)
        trials_done = 0
        while totals.n_w < target_heralds:
            if trials_done >= self.max_trials_per_point:
                raise SimulationBudgetError(
                    f"budget exhausted with {totals.n_w}/{target_heralds} heralds")
            want = max(target_heralds - totals.n_w, 1)
            bt = int(min(self.max_trials_per_point - trials_done,
                         math.ceil(1.15 * want / p_any) + 1000,
                         _MAX_HERALDS_PER_BATCH / p_any))
            rng = next_rng()
            heralds = int(rng.binomial(bt, p_any))
            if heralds:
                clicks = self._conditional_click_patterns(rng, heralds, n_off, p_click)
                delta = self._jitter(rng, heralds)
                surviving = np.zeros(heralds, dtype=np.int64)
                for j in range(n_off):
                    cj = clicks[:, j]
                    n_j = np.where(
                        cj,
                        self.tables.sample_given_click(rng, heralds),
                        self.tables.sample_given_noclick(rng, heralds))
                    eta_j = tables[j](t_read - delta)
                    photons = rng.binomial(n_j, eta_j)
                    surviving += rng.binomial(photons, self.chain.arm_efficiency)
                s = self.chain.read_splitter_ratio
                k1 = rng.binomial(surviving, s)
                k2 = surviving - k1
                r1 = (k1 > 0) | (rng.random(heralds) < noise_q * s + self.chain.dark_click_prob)
                r2 = (k2 > 0) | (rng.random(heralds) < noise_q * (1 - s) + self.chain.dark_click_prob)
                read_any = r1 | r2
                for j in range(n_off):
                    pair_counts[j] += int(np.sum(clicks[:, j] & read_any))
                batch = CoincidenceStats.from_arrays(bt, np.ones(heralds, bool), r1, r2)
            else:
                batch = CoincidenceStats(trials=bt)
            totals = totals.merge(batch)
            trials_done += bt
        return totals, pair_counts

    @staticmethod
    def _conditional_click_patterns(rng, heralds, n_off, p_click):
        """Click pattern over write slots conditioned on at least one click."""
        patterns = np.arange(1, 2**n_off)
        bits = ((patterns[:, None] >> np.arange(n_off)) & 1).astype(bool)
        w = np.prod(np.where(bits, p_click, 1.0 - p_click), axis=1)
        w = w / w.sum()
        chosen = np.searchsorted(np.cumsum(w), rng.random(heralds) * w.sum(),
                                 side="right")
        return bits[np.minimum(chosen, len(patterns) - 1)]

    def run_multiplex(self, plan: MultiplexPlan, target_heralds: int = 10_000,
                      independent_heralds: int | None = None) -> MultiplexResult:
        if not self.gradient_on:
            raise InvalidParameterError("multiplexing needs the gradient enabled")
        if independent_heralds is None:
            independent_heralds = target_heralds
        if max(plan.write_offsets) >= self.sequence.reversal_latency:
            raise InvalidParameterError(
                "write offsets must precede the reversal instruction")
        peaks = tuple(self.rephasing_time(creation_time=off)
                      for off in plan.write_offsets)
        scan = np.asarray(sorted(set(plan.readout_scan) | set(peaks)), dtype=float)
        self._check_interrogation_fits(scan.max())
        tables = self._multiplex_tables(plan, scan.min(), scan.max())
        n_off = len(plan.write_offsets)

        # combined run
        combined_stats, pair_counts = [], []
        for i, t in enumerate(scan):
            stats, pairs = self.simulate_multiplex_point(
                t, plan, tables, "multiplex-combined", i, target_heralds)
            combined_stats.append(stats)
            pair_counts.append(pairs)
        pair_counts = np.array(pair_counts).T  # (n_off, n_scan)
        trials = np.array([s.trials for s in combined_stats], dtype=float)
        pairs_prob = pair_counts / trials
        pairs_err = np.sqrt(np.maximum(pairs_prob * (1 - pairs_prob), 0) / trials)
        combined_curve = EfficiencyCurve(
            times=scan,
            eta=np.array([s.eta_ret if s.eta_ret_defined else math.nan
                          for s in combined_stats]),
            err=np.array([s.eta_ret_err if s.eta_ret_defined else math.nan
                          for s in combined_stats]),
            n_w=np.array([s.n_w for s in combined_stats]),
            n_wr=np.array([s.n_wr for s in combined_stats]),
            trials=np.array([s.trials for s in combined_stats]),
            stats=combined_stats)

        # independent runs: one write slot active at a time
        independent = []
        for j, off in enumerate(plan.write_offsets):
            curve = self._curve(scan, independent_heralds, f"multiplex-indep-{j}",
                                lambda t, tab=tables[j]: tab)
            independent.append(curve)

        # selectivity from the combined run at each peak readout
        sel = np.zeros((len(peaks), n_off))
        sel_err_sq = 0.0
        for i_pk, t_pk in enumerate(peaks):
            i_scan = int(np.argmin(np.abs(scan - t_pk)))
            probs = pairs_prob[:, i_scan]
            sel[i_pk] = selectivity(probs)
            own = sel[i_pk, i_pk]
            n_own = max(pair_counts[i_pk, i_scan], 1)
            sel_err_sq += (own * (1 - own)) / n_own / len(peaks) ** 2
        mean_sel = float(np.mean([sel[i, i] for i in range(len(peaks))]))

        return MultiplexResult(
            plan=plan, peak_times=peaks, scan_times=scan,
            combined_pairs=pairs_prob, combined_pair_errs=pairs_err,
            combined_curve=combined_curve, independent_curves=independent,
            selectivities=sel, mean_selectivity=mean_sel,
            selectivity_err=float(math.sqrt(sel_err_sq)))

    # -- antibunching scan -----------------------------------------------------

    def run_alpha_scan(self, pw_values, budget_constant: float = 4e4,
                       min_trials: int = 10_000_000,
                       readout_time: float | None = None) -> list[AlphaPoint]:
        """Alpha versus write detection probability at the rephasing peak."""
        from .photon_stats import antibunching_alpha, excitation_for_write_probability

        if readout_time is None:
            readout_time = self.rephasing_time() if self.gradient_on \
                else self.sequence.readout_delay
        points = []
        base_emission = self.emission
        base_tables = self._tables
        eta = self.eta_table(readout_time, readout_time)
        try:
            for i, pw in enumerate(pw_values):
                p = excitation_for_write_probability(pw, self.chain)
                self.emission = EmissionModel(p, base_emission.fock_cutoff)
                self._tables = None
                trials = int(max(min_trials, budget_constant / pw**2))
                stats = self.simulate_point(readout_time, eta, "alpha", i,
                                            trials_budget=trials)
                alpha, err = antibunching_alpha(stats)
                points.append(AlphaPoint(target_pw=pw, excitation_probability=p,
                                         stats=stats, alpha=alpha, alpha_err=err))
        finally:
            self.emission = base_emission
            self._tables = base_tables
        return points

    # -- event-level path -------------------------------------------------------

    def generate_records(self, n_ensembles: int, readout_delay: float | None = None,
                         write_offsets: tuple[float, ...] = (0.0,),
                         label: str = "events"):
        """Walk ensembles trial by trial, emitting TrialRecords and timetags.

        Slower than the vectorised engine but models the full state
        machine including wall clock, cleaning stages and (optionally)
        imperfect cleaning.  Spin-waves surviving a cleaning stage stay
        stored and add their (long dephased) readout contribution to the
        eventual heralded trial.
        """
        seq = self.sequence
        t_read_delay = seq.readout_delay if readout_delay is None else readout_delay
        self._check_interrogation_fits(t_read_delay)
        noise_q = self.noise.read_noise_prob(self.expected_pw(len(write_offsets)))
        trial_records: list[TrialRecord] = []
        ticks, channels, ens_ids, trial_idxs = [], [], [], []
        wall_clock = 0.0
        ensemble_periods = []

        for e in range(n_ensembles):
            rng = stream(self.seed, label, e)
            t0 = wall_clock + seq.overhead  # interrogation start
            heralded = False
            trials_used = 0
            stored_waves: list[tuple[float, int]] = []  # (local creation, n)
            for k in range(seq.max_trials):
                trials_used = k + 1
                trial_start_local = k * seq.trial_period
                trial_start = t0 + trial_start_local
                clicks = []
                for off in write_offsets:
                    if rng.random() < self.tables.p_click:
                        clicks.append((trial_start + off, "w"))
                        n = int(self.tables.sample_given_click(rng, 1)[0])
                    else:
                        n = int(self.tables.sample_given_noclick(rng, 1)[0])
                    if n > 0:
                        stored_waves.append((trial_start_local + off, n))
                record = TrialRecord(
                    ensemble_id=e, trial_index=k,
                    write_times=[trial_start + off for off in write_offsets],
                    write_clicks=clicks, read_clicks=[], gradient_events=[])
                if k == 0 and self.gradient_on:
                    record.gradient_events.append((t0, "on"))
                if clicks:
                    heralded = True
                    t_read_local = trial_start_local + t_read_delay
                    t_read = t0 + t_read_local
                    delta = float(self._jitter(rng, 1)[0])
                    if self.gradient_on:
                        record.gradient_events.append(
                            (trial_start + seq.reversal_latency, "reverse"))
                        # gradient timeline on the ensemble axis: reversal
                        # anchored to the heralding trial
                        wf = self.waveform.shifted(trial_start_local)
                    else:
                        wf = self._zero_waveform()
                    surviving = 0
                    for (t_birth, n_exc) in stored_waves:
                        eta = float(retrieval_efficiency_curve(
                            self.ensemble, self.mode_at(t_birth), wf,
                            self.mixture, [max(t_read_local - delta, t_birth)],
                            self.eta0, motional_lifetime=self.extrinsic_lifetime,
                            moving_zeeman=self.moving_zeeman)[0])
                        photons = rng.binomial(n_exc, eta)
                        surviving += rng.binomial(photons, self.chain.arm_efficiency)
                    s = self.chain.read_splitter_ratio
                    k1 = rng.binomial(surviving, s)
                    k2 = surviving - k1
                    if k1 > 0 or rng.random() < noise_q * s + self.chain.dark_click_prob:
                        record.read_clicks.append((t_read, "r1"))
                    if k2 > 0 or rng.random() < noise_q * (1 - s) + self.chain.dark_click_prob:
                        record.read_clicks.append((t_read, "r2"))
                    for t_click, _ in clicks:
                        ticks.append(int(round(t_click / TICK_SECONDS)))
                        channels.append(int(Channel.WRITE))
                        ens_ids.append(e)
                        trial_idxs.append(k)
                    for t_click, det in record.read_clicks:
                        ticks.append(int(round(t_click / TICK_SECONDS)))
                        channels.append(int(Channel.READ1 if det == "r1" else Channel.READ2))
                        ens_ids.append(e)
                        trial_idxs.append(k)
                    trial_records.append(record)
                    break
                # no herald: cleaning resets the memory (imperfectly when
                # residual_excitation > 0)
                record.cleaning_time = trial_start + seq.trial_period
                trial_records.append(record)
                if seq.residual_excitation > 0.0:
                    stored_waves = [
                        (t, n) for (t, n) in stored_waves
                        if rng.random() < seq.residual_excitation
                    ]
                else:
                    stored_waves = []
            period = seq.ensemble_period(trials_used, heralded, t_read_delay)
            ensemble_periods.append(period)
            wall_clock += period

        records = make_records(ticks, channels, ens_ids, trial_idxs)
        order = np.argsort(records["tick"], kind="stable")
        return trial_records, records[order], np.array(ensemble_periods)
