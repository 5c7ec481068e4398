#!/usr/bin/env python3
"""Reverberation sweep: request RT60 values across room sizes, compute the
image-source response, and measure the realized decay from the Schroeder
curve."""

import argparse

import numpy as np

from stereoscene.acoustics import compute_rir, measure_rt60, rt60_to_absorption
from stereoscene.rng import SeededRng
from stereoscene.scene import sample_mic_array, sample_room, sample_source_placement


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    rng = SeededRng(args.seed)
    print(f"{'label':>9} {'room (m)':>9} {'requested':>10} {'measured':>9} {'err':>7}")
    errors = []
    i = 0
    while len(errors) < args.scenes:
        i += 1
        srng = rng.child(f"{i}")
        label = ("small", "moderate")[i % 2]
        room = sample_room(label, srng.child("room"))
        dims = np.asarray(room.dims)
        surface = 2 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2])
        mfp_time = 4 * float(np.prod(dims)) / surface / 343.0
        if room.rt60 < 8.0 * mfp_time:
            continue  # too few reflections for a meaningful decay time
        mic = sample_mic_array(room.dims, srng.child("mic"), base_size=room.base_size)
        _, _, pos = sample_source_placement("front", "moderate", room.dims, mic,
                                            srng.child("src"))
        absorption = rt60_to_absorption(room.rt60, room.dims)
        rir = compute_rir(room.dims, absorption, pos, mic.left_pos, fs=16000)
        measured = measure_rt60(rir.samples[0], 16000)
        err = abs(measured - room.rt60) / room.rt60
        errors.append(err)
        print(f"{label:>9} {room.base_size:9.1f} {room.rt60:10.3f} "
              f"{measured:9.3f} {err:6.1%}")
    print(f"median error over {len(errors)} scenes: {np.median(errors):.1%}")


if __name__ == "__main__":
    main()
