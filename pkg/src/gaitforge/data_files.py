"""Locations of the packaged model and reference gait data files."""

from importlib import resources


def default_model_path():
    return resources.files("gaitforge").joinpath("data/planar16.model.txt")


def default_gait_path():
    return resources.files("gaitforge").joinpath("data/reference_gait.txt")
