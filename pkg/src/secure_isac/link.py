"""Hybrid precoding, artificial-noise projection, SINR and secrecy metrics,
power accounting, and the per-slot coefficient context shared by the game
layers.

Eavesdropper SINR supports two readings. The physical one evaluates the actual
beam coupling with inter-stream interference and receiver noise. The
worst-case one is the defender's threat model: the eavesdropper is credited
with matched-filter capture of the full stream power, cancellation of other
streams, and a negligible noise floor, so only artificial noise and
cooperative jamming degrade her. Engine-level secrecy accounting uses the
worst-case reading.
"""

from dataclasses import dataclass, field

import numpy as np


class CapacityError(ValueError):
    """More data streams than RF chains."""


class NoNullspaceError(ValueError):
    """Scheduled channels span the whole transmit space."""


@dataclass(frozen=True)
class PowerSplit:
    """Base-station power fractions for data/AN/sensing plus the total budget."""

    alpha: float
    beta: float
    gamma: float
    bs_power: float

    def __post_init__(self):
        for name, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            if v < -1e-12:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValueError(
                f"power fractions must sum to 1, got {self.alpha + self.beta + self.gamma}")
        if self.bs_power < 0:
            raise ValueError("bs_power must be >= 0")


@dataclass(frozen=True)
class PowerConsts:
    """Static consumption model: RF chains, per-chain and baseband draw, PA efficiency."""

    num_rf: int = 8
    p_rf_w: float = 0.25
    p_bb_w: float = 1.0
    pa_efficiency: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.pa_efficiency <= 1.0:
            raise ValueError(f"pa_efficiency must be in (0, 1], got {self.pa_efficiency}")


@dataclass
class PrecoderSet:
    """Partially connected hybrid precoder: analog stage, digital stage, composite beams."""

    analog: np.ndarray   # (N, R), constant modulus inside each sub-array block
    digital: np.ndarray  # (R, U)
    beams: np.ndarray    # (N, U), unit-norm columns

    @property
    def num_streams(self) -> int:
        return self.beams.shape[1]


def build_precoder(thn_channels, num_rf: int, rzf_reg: float = 1e-3) -> PrecoderSet:
    """Phase-only sub-array analog stage plus regularized zero-forcing digital stage.

    RF chain b is aligned with scheduled node b's channel restricted to its
    sub-array; the digital stage suppresses cross-stream coupling. Composite
    beam columns are normalized to unit power.
    """
    channels = list(thn_channels)
    u_count = len(channels)
    if u_count > num_rf:
        raise CapacityError(f"{u_count} streams exceed {num_rf} RF chains")
    if u_count == 0:
        return PrecoderSet(np.zeros((0, num_rf), complex), np.zeros((num_rf, 0), complex),
                           np.zeros((0, 0), complex))
    n = channels[0].shape[0]
    if n % num_rf != 0:
        raise ValueError(f"{n} antennas not divisible into {num_rf} sub-arrays")
    sub = n // num_rf

    analog = np.zeros((n, num_rf), dtype=complex)
    for b in range(num_rf):
        rows = slice(b * sub, (b + 1) * sub)
        if b < u_count:
            # phase-align with the channel so h^H f adds coherently
            block = channels[b][rows]
            phases = np.where(np.abs(block) > 0, np.exp(1j * np.angle(block)),
                              np.ones(sub, dtype=complex))
        else:
            phases = np.ones(sub, dtype=complex)
        analog[rows, b] = phases / np.sqrt(sub)

    h = np.stack(channels)                      # (U, N), entries h_u
    h_eff = np.conj(h) @ analog                 # (U, R), h_u^H F_RF
    gram = h_eff @ h_eff.conj().T
    reg = rzf_reg * np.trace(gram).real / u_count
    digital = h_eff.conj().T @ np.linalg.inv(gram + reg * np.eye(u_count))
    beams = analog @ digital
    norms = np.linalg.norm(beams, axis=0)
    if np.any(norms < 1e-15):
        raise ValueError("degenerate beam column in precoder")
    beams /= norms
    digital /= norms
    return PrecoderSet(analog, digital, beams)


def an_projector(thn_channels, num_antennas: int | None = None) -> np.ndarray:
    """Orthonormal basis of the nullspace of the stacked scheduled channels.

    Columns are orthogonal to every scheduled channel (residual <= 1e-8), so
    noise radiated through them is invisible to the served nodes.
    """
    channels = list(thn_channels)
    if not channels:
        if num_antennas is None:
            raise ValueError("num_antennas required for an empty channel set")
        return np.eye(num_antennas, dtype=complex)
    n = channels[0].shape[0]
    if len(channels) >= n:
        raise NoNullspaceError(f"{len(channels)} channels span all {n} antennas")
    rows = np.conj(np.stack(channels))          # rows h_u^H
    _, _, vh = np.linalg.svd(rows, full_matrices=True)
    return vh[len(channels):].conj().T          # (N, N - U)


def an_power_at(channel: np.ndarray, an_basis: np.ndarray, an_power_w: float) -> float:
    """AN power delivered to a receiver with the given channel."""
    dim = an_basis.shape[1]
    if dim == 0 or an_power_w <= 0.0:
        return 0.0
    return an_power_w / dim * float(np.linalg.norm(channel.conj() @ an_basis) ** 2)


def sinr_legitimate(u: int, split: PowerSplit, precoder: PrecoderSet, thn_channels,
                    jam_interference_w: float, an_basis: np.ndarray | None,
                    noise_w: float, rx_gain: float = 1.0) -> float:
    """Instantaneous SINR of scheduled node u: desired stream over inter-stream
    interference, jammer leakage, residual AN, and noise."""
    channels = list(thn_channels)
    u_count = precoder.num_streams
    if not 0 <= u < u_count:
        raise ValueError(f"node index {u} is not a scheduled stream (have {u_count})")
    p_stream = split.alpha * split.bs_power / u_count
    coupling = np.abs(np.conj(channels[u]) @ precoder.beams) ** 2   # (U,)
    desired = p_stream * coupling[u] * rx_gain
    isi = p_stream * (coupling.sum() - coupling[u]) * rx_gain
    an = 0.0
    if an_basis is not None:
        an = an_power_at(channels[u], an_basis, split.beta * split.bs_power) * rx_gain
    return desired / (isi + jam_interference_w + an + noise_w)


def sinr_eavesdropper(eve_channel: np.ndarray, u: int, split: PowerSplit,
                      precoder: PrecoderSet, jam_w: float, an_basis: np.ndarray | None,
                      noise_w: float, rx_gain: float = 1.0,
                      worst_case: bool = False) -> float:
    """Eavesdropper SINR when decoding stream u.

    worst_case=False evaluates the realized beam couplings with inter-stream
    interference. worst_case=True is the defender's bound: full matched-filter
    capture of stream u, other streams cancelled.
    """
    u_count = precoder.num_streams
    if not 0 <= u < u_count:
        raise ValueError(f"stream index {u} out of range (have {u_count})")
    p_stream = split.alpha * split.bs_power / u_count
    an = 0.0
    if an_basis is not None:
        an = an_power_at(eve_channel, an_basis, split.beta * split.bs_power) * rx_gain
    if worst_case:
        desired = p_stream * float(np.linalg.norm(eve_channel) ** 2) * rx_gain
        isi = 0.0
    else:
        coupling = np.abs(np.conj(eve_channel) @ precoder.beams) ** 2
        desired = p_stream * coupling[u] * rx_gain
        isi = p_stream * (coupling.sum() - coupling[u]) * rx_gain
    den = isi + jam_w + an + noise_w
    if den <= 0.0:
        return np.inf if desired > 0 else 0.0
    return desired / den


def worst_case_eve(eve_sinrs) -> float:
    """SINR of the most detrimental eavesdropper."""
    values = list(eve_sinrs)
    if not values:
        raise ValueError("empty eavesdropper set")
    return max(values)


def secrecy_rate(sinr_legit: float, sinr_eve: float) -> float:
    """Wiretap secrecy rate [log2(1+SINR_l) - log2(1+SINR_e)]^+ in bps/Hz."""
    if sinr_legit < 0 or sinr_eve < 0:
        raise ValueError("SINRs must be nonnegative")
    if not np.isfinite(sinr_eve):
        return 0.0
    return max(0.0, float(np.log2(1.0 + sinr_legit) - np.log2(1.0 + sinr_eve)))


def power_accounting(bs_power: float, hn_powers, consts: PowerConsts):
    """Total radiated power and slot consumption (static draw + PA losses)."""
    tx_total = bs_power + float(np.sum(hn_powers))
    p_cons = consts.num_rf * consts.p_rf_w + consts.p_bb_w
    return tx_total, p_cons + tx_total / consts.pa_efficiency


def see(sum_secrecy: float, slot_power_w: float) -> float:
    """Secrecy energy efficiency: aggregate secrecy spectral efficiency per watt."""
    if slot_power_w <= 0:
        raise ValueError(f"slot power must be > 0, got {slot_power_w}")
    return sum_secrecy / slot_power_w


def outage_metrics(rates, threshold: float):
    """(R_min, R_mean, outage fraction) over active nodes; empty set scores a
    no-service slot (rates 0, outage 1)."""
    values = np.asarray(list(rates), dtype=float)
    if values.size == 0:
        return 0.0, 0.0, 1.0
    return (float(values.min()), float(values.mean()),
            float(np.mean(values < threshold)))


@dataclass
class SlotContext:
    """Precomputed per-slot interference coefficients.

    Every quantity the follower game and the cooperative refinement evaluate
    is an affine or rational function of the hybrid-node power vector; this
    context holds the coefficients so utility evaluations are cheap scalar
    arithmetic.

    Shapes: K hybrid nodes, U served streams, E eavesdroppers.
    jam_to_eve[k, e] / jam_to_thn[k, u] are delivered watts per transmitted
    watt from node k (path gain x transmit pattern x fade).
    """

    served: list            # served node ids, stream order
    sig_w: np.ndarray       # (U,) desired power at each served node
    isi_w: np.ndarray       # (U,) inter-stream interference
    an_thn_w: np.ndarray    # (U,) residual AN
    noise_w: float
    eve_capture_w: np.ndarray   # (E,) worst-case stream capture per eavesdropper
    eve_an_w: np.ndarray        # (E,) AN power at each eavesdropper
    jam_to_eve: np.ndarray      # (K, E)
    jam_to_thn: np.ndarray      # (K, U)
    eve_noise_w: float = 0.0
    info_gain: float = 0.0
    p_stream_w: float = 1.0     # per-stream data power behind eve_capture_w

    @property
    def num_nodes(self) -> int:
        return self.jam_to_eve.shape[0]

    @property
    def num_eves(self) -> int:
        return self.jam_to_eve.shape[1]

    def thn_sinr(self, powers: np.ndarray) -> np.ndarray:
        leak = powers @ self.jam_to_thn if self.jam_to_thn.size else np.zeros(len(self.served))
        return self.sig_w / (self.isi_w + self.an_thn_w + leak + self.noise_w)

    def eve_sinr(self, powers: np.ndarray) -> np.ndarray:
        """Worst-case per-eavesdropper SINR (identical across streams)."""
        jam = powers @ self.jam_to_eve if self.jam_to_eve.size else np.zeros(self.num_eves)
        den = self.eve_an_w + jam + self.eve_noise_w
        out = np.full(self.num_eves, np.inf)
        ok = den > 0
        out[ok] = self.eve_capture_w[ok] / den[ok]
        out[~ok & (self.eve_capture_w <= 0)] = 0.0
        return out

    def eve_rate_max(self, powers: np.ndarray, capture_scale: float = 1.0) -> float:
        """Spectral efficiency of the strongest eavesdropper; capture_scale
        rescales the per-stream power she intercepts."""
        if self.num_eves == 0:
            return 0.0
        s = capture_scale * np.max(self.eve_sinr(powers))
        return float(np.log2(1.0 + s)) if np.isfinite(s) else np.inf

    def rates(self, powers: np.ndarray) -> np.ndarray:
        """Per served node secrecy rates at the given power profile."""
        if not self.served:
            return np.zeros(0)
        eve = self.eve_rate_max(powers)
        if not np.isfinite(eve):
            return np.zeros(len(self.served))
        legit = np.log2(1.0 + self.thn_sinr(powers))
        return np.maximum(0.0, legit - eve)

    def sum_rate(self, powers: np.ndarray) -> float:
        return float(self.rates(powers).sum())

    def leakage_at_served(self, powers: np.ndarray) -> np.ndarray:
        """Interference power each served node receives from all hybrid nodes."""
        if not self.served:
            return np.zeros(0)
        return powers @ self.jam_to_thn

    def leakage_of_node(self, k: int, powers: np.ndarray) -> float:
        """Interference power node k delivers to the served nodes."""
        if not self.served:
            return 0.0
        return float(powers[k] * self.jam_to_thn[k].sum())

    def jam_contribution(self, k: int, powers: np.ndarray) -> float:
        """Drop in the strongest eavesdropper's rate attributable to node k's power,
        accumulated over served streams."""
        if not self.served or powers[k] <= 0.0:
            return 0.0
        without = powers.copy()
        without[k] = 0.0
        with_rate = self.eve_rate_max(powers)
        without_rate = self.eve_rate_max(without)
        if not np.isfinite(with_rate):
            gain = 0.0   # the interceptor stays clean regardless of this jammer
        elif not np.isfinite(without_rate):
            gain = 50.0  # this jammer alone takes the interceptor off infinity
        else:
            gain = without_rate - with_rate
        return len(self.served) * max(0.0, gain)


@dataclass
class SlotRecord:
    """Everything logged for one slot."""

    slot: int
    alpha: float
    beta: float
    gamma: float
    pi: float
    tau: float
    kappa: float
    sigma_deg: float
    entropy_bits: float
    r_min: float
    r_mean: float
    outage: float
    see: float
    bs_power_dbm: float
    hn_power_sum_w: float
    gne_iters: int
    gne_gap: float
    n_thn: int
    n_jhn: int
    refine_iters: int
    jam_power_w: float
    # diagnostics beyond the canonical trace columns
    predicted_entropy_bits: float = 0.0
    entropy_per_eve: list = field(default_factory=list)
    rates: dict = field(default_factory=dict)
    roles: dict = field(default_factory=dict)
    powers: dict = field(default_factory=dict)
    tx_total_w: float = 0.0
    slot_power_w: float = 0.0
    secrecy_sum: float = 0.0
    leader_residual: float = 0.0
    gne_converged: bool = True
    shaping_relaxed: bool = False
    coalition_scale: float = 1.0
    coalitions: list = field(default_factory=list)   # (target_deg, member ids)
    leader_objective: float = 0.0
