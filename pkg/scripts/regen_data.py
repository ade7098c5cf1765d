#!/usr/bin/env python3
"""Regenerate the packaged model and reference gait data files."""

import pathlib

import gaitforge as gf
from gaitforge.gait_env import generate_reference_gait, write_reference_gait

DATA = pathlib.Path(__file__).resolve().parent.parent / "src" / "gaitforge" / "data"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    model = gf.build_reference_model()
    gf.save_model(model, DATA / "planar16.model.txt")
    ref = generate_reference_gait(model)
    write_reference_gait(DATA / "reference_gait.txt", ref, model.joint_names)
    print(f"wrote {DATA / 'planar16.model.txt'}")
    print(f"wrote {DATA / 'reference_gait.txt'}  (stride {ref.stride:.4f} m, cadence {ref.cadence} steps/s)")


if __name__ == "__main__":
    main()
