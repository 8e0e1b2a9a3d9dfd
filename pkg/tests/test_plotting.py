import numpy as np

from droopgrid.plotting import plot_spectrum, plot_sweep, plot_trajectory
from droopgrid.simulate import SweepRun, Trajectory

PNG = b"\x89PNG\r\n\x1a\n"


def _traj():
    t = np.linspace(0, 1, 51)
    return Trajectory(t, np.vstack([0.1 * t, np.exp(-t)]), np.zeros((2, 51)), 1 + 0.01 * np.exp(-np.vstack([t, 2 * t])),
                      {"frame_omega": 0.1})


def test_trajectory_png_is_reproducible(tmp_path):
    a = plot_trajectory(_traj(), tmp_path / "a.png")
    b = plot_trajectory(_traj(), tmp_path / "b.png")
    assert a.read_bytes()[:8] == PNG
    assert a.read_bytes() == b.read_bytes()
    assert b"Software" not in a.read_bytes()


def test_sweep_and_spectrum_figures(tmp_path):
    runs = [SweepRun(v, None, _traj(), {}, True) for v in (0.1, 2.0)]
    assert plot_sweep(runs, tmp_path / "s.svg", "T2", buses=(0, 1)).read_text().startswith("<?xml")
    p = plot_spectrum([-1 + 2j, -1 - 2j, 0.0, -300.0], tmp_path / "e.png", title="J")
    assert p.stat().st_size > 1000
