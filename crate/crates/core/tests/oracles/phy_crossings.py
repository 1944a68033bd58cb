#!/usr/bin/env python3
"""Independent oracle for the frame-success model.

Evaluates BER with scipy's erfc and the convolutional union bound written out
term by term, then bisects for the SNR (dB) at which a frame of the given
length succeeds with probability 0.3 / 0.5 / 0.7 / 0.95.  The printed values
are frozen into tests/phy_oracle.rs.
"""
import math
from scipy.special import erfc

MODES = [
    # (mbps, modulation, coding_b)
    (6, "bpsk", 1), (9, "bpsk", 3), (12, "qpsk", 1), (18, "qpsk", 3),
    (24, "qam16", 1), (36, "qam16", 3), (48, "qam64", 2), (54, "qam64", 3),
]

SPECTRA = {
    1: [(10, 36), (12, 211), (14, 1404), (16, 11633), (18, 77433), (20, 502690),
        (22, 3322763), (24, 21292910), (26, 134365911)],
    2: [(6, 3), (7, 70), (8, 285), (9, 1276), (10, 6160), (11, 27128), (12, 117019),
        (13, 498860), (14, 2103891), (15, 8784123)],
    3: [(5, 42), (6, 201), (7, 1492), (8, 10469), (9, 62935), (10, 379644),
        (11, 2253373), (12, 13073811), (13, 75152755), (14, 428005675)],
}

def ber(snr, mod):
    if mod == "bpsk":
        return 0.5 * erfc(math.sqrt(snr))
    if mod == "qpsk":
        return 0.5 * erfc(math.sqrt(snr / 2.0))
    if mod == "qam16":
        return 0.375 * erfc(math.sqrt(snr / 10.0))
    return 7.0 / 24.0 * erfc(math.sqrt(snr / 42.0))

def success(snr_db, mode, nbytes):
    _, mod, b = mode
    p = min(ber(10 ** (snr_db / 10.0), mod), 0.5)
    if p == 0.0:
        return 1.0
    d = math.sqrt(4.0 * p * (1.0 - p))
    pe = sum(a * d ** dist for dist, a in SPECTRA[b]) / (2.0 * b)
    pe = min(pe, 1.0)
    return (1.0 - pe) ** (8 * nbytes)

def crossing(mode, nbytes, target):
    lo, hi = -10.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if success(mid, mode, nbytes) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

if __name__ == "__main__":
    for target in (0.3, 0.5, 0.7, 0.95):
        print(target, [round(crossing(m, 1472, target), 6) for m in MODES])
    for snr_db in (5.0, 10.0, 20.0):
        print(snr_db, [f"{success(snr_db, m, 1472):.12e}" for m in MODES])
