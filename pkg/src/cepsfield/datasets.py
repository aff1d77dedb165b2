"""Bundled example data."""

from importlib import resources

from .lattice import load_csv


def mercer_hall_straw_path():
    """Path to the bundled 20x25 straw-yield lattice (see the NOTE file beside it)."""
    return resources.files("cepsfield").joinpath("data/mercer_hall_straw.csv")


def load_mercer_hall_straw(design_spec="constant+rowcol"):
    """The Mercer-Hall straw yields as a LatticeSample.

    The default design fits an intercept plus the raw row and column
    indices, which captures the field's planar fertility trend.
    """
    with resources.as_file(mercer_hall_straw_path()) as path:
        return load_csv(path, design_spec=design_spec)
