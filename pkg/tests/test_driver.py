import numpy as np
import pytest
from fdmod.acquisition import ricker
from fdmod.driver import (
    ParallelExecutor,
    RunReport,
    SequentialExecutor,
    SimConfig,
    cfl_dt,
    default_ndamping,
    format_parameter,
    run,
    select_target,
    setup_run,
)
from fdmod.grid import Box, make_grid
from fdmod.model import constant_model, layered_model
from fdmod.utils import ConfigurationError, InstabilityError


def test_format_parameter_layout():
    assert format_parameter("ngrid", [240, 240, 240]) == " ngrid              =          240         240         240"
    assert format_parameter("dgrid", [20.0] * 3) == (
        " dgrid              =    20.0000000       20.0000000       20.0000000    "
    )
    assert format_parameter("cfl", [0.8]) == " cfl                =   0.800000012    "
    assert format_parameter("nreceivers", [57600]) == " nreceivers         =        57600"
    assert format_parameter("time_rec", [0.0]).endswith("0.00000000    ")
    assert format_parameter("dt", [1e-3]).strip().endswith("1.00000005E-03")


def test_run_report_parameter_block():
    config = SimConfig(ngrid=(240, 240, 240), nsteps=300, verbose=True)
    setup = setup_run(config)
    lines = RunReport(setup).parameter_lines()
    names = [line.split("=")[0].strip() for line in lines if line.strip()]
    assert names == [
        "nthreads",
        "ngrid",
        "dgrid",
        "nsteps",
        "fmax",
        "vmin",
        "vmax",
        "cfl",
        "stencil",
        "source_loc",
        "ndamping",
        "ntaper",
        "nshots",
        "time_rec",
        "nreceivers",
        "receiver_increment",
        "source_increment",
    ]
    values = {line.split("=")[0].strip(): line.split("=")[1].split() for line in lines if line.strip()}
    assert values["nsteps"] == ["300"]
    assert values["fmax"] == ["25.0000000"]
    assert values["vmin"] == ["1500.00000"]
    assert values["vmax"] == ["4500.00000"]
    assert values["stencil"] == ["4", "4", "4"]
    assert values["source_loc"] == ["120", "120", "120"]
    assert values["ndamping"] == ["27", "27", "27"]
    assert values["ntaper"] == ["3", "3", "3"]
    assert values["nshots"] == ["1"]
    assert values["nreceivers"] == ["57600"]
    assert lines.count(" ") == 4
    assert RunReport.progress_line(100, 300) == " time step         100 /         300"


def test_default_ndamping():
    grid = make_grid(240, 20.0)
    assert default_ndamping(grid, 4500.0, 25.0) == (27, 27, 27)
    assert default_ndamping(make_grid(20, 20.0), 4500.0, 25.0) == (9, 9, 9)


def test_cfl_dt_scaling():
    grid = make_grid(30, 20.0)
    slow = constant_model(grid, 2000.0)
    fast = constant_model(grid, 4000.0)
    dt = cfl_dt(slow, grid)
    assert np.isclose(cfl_dt(fast, grid), dt / 2)
    assert np.isclose(cfl_dt(slow, grid, cfl=0.4), dt / 2)
    assert cfl_dt(slow, grid, staggered=True) <= dt
    assert dt < 0.5 / 25.0
    with pytest.raises(ConfigurationError):
        cfl_dt(slow, grid, cfl=1.5)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(ngrid=(10, 10)).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(nsteps=0).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(propagator="acoustic_tti").validate()
    with pytest.raises(ConfigurationError):
        SimConfig(nshots=2).validate()
    with pytest.raises(ConfigurationError):
        select_target(SimConfig(target="gpu"))
    assert isinstance(select_target(SimConfig()), SequentialExecutor)
    assert isinstance(select_target(SimConfig(target="parallel", nthreads=3)), ParallelExecutor)


def test_model_grid_mismatch():
    model = layered_model(make_grid(12, 20.0))
    with pytest.raises(ConfigurationError):
        setup_run(SimConfig(ngrid=16, ndamping=3), model)


def test_run_report_and_progress():
    config = SimConfig(ngrid=24, nsteps=200, ndamping=5, verbose=True)
    echoed = []
    shot, report = run(config, echo=echoed.append)
    assert report.progress == [100, 200]
    assert " time step         200 /         200" in echoed
    assert echoed[-2].startswith("Time Kernel")
    assert echoed[-1].startswith("Time Modeling")
    assert 0 < report.kernel_seconds <= report.modeling_seconds
    assert shot.traces.shape == (24 * 24, 200)
    assert np.all(np.isfinite(shot.traces))
    assert np.abs(shot.traces).max() > 0


def test_quiet_run_has_no_progress():
    config = SimConfig(ngrid=20, nsteps=100, ndamping=4, verbose=False)
    _, report = run(config)
    assert report.progress == []
    assert not any("time step" in line for line in report.render().split("\n"))


def test_cfl_dt_values():
    grid = make_grid(10, 1.0, radius=1)
    assert np.isclose(cfl_dt(constant_model(grid, 1.0), grid, stencil=1, cfl=1.0), 1 / np.sqrt(3))
    grid = make_grid(30, 20.0)
    model = constant_model(grid, 4500.0)
    assert np.isclose(cfl_dt(model, grid), 0.0016102, rtol=1e-4)
    assert np.isclose(cfl_dt(model, grid, staggered=True), 0.0015959, rtol=1e-4)


def test_time_step_per_propagator():
    collocated = setup_run(SimConfig(ngrid=30, ndamping=4))
    staggered = setup_run(SimConfig(ngrid=30, ndamping=4, propagator="acoustic_iso"))
    assert np.isclose(collocated.dt, 0.0016102, rtol=1e-4)
    assert np.isclose(staggered.dt, 0.0015959, rtol=1e-4)
    assert setup_run(SimConfig(ngrid=30, ndamping=4, dt=1e-3)).dt == 1e-3


def test_time_rec_is_passthrough():
    full, _ = run(SimConfig(ngrid=20, nsteps=40, ndamping=4))
    late, report = run(SimConfig(ngrid=20, nsteps=40, ndamping=4, time_rec=10.5 * full.dt))
    assert late.nsteps == 40
    assert np.array_equal(late.traces, full.traces)
    assert late.geometry.time_rec == 10.5 * full.dt
    line = next(line for line in report.parameter_lines() if line.startswith(" time_rec"))
    assert float(line.split("=")[1]) == pytest.approx(10.5 * full.dt, rel=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("nthreads", [2, 4, 8])
def test_parallel_matches_sequential(nthreads):
    base = dict(ngrid=64, nsteps=100)
    seq, _ = run(SimConfig(**base))
    par, _ = run(SimConfig(target="parallel", nthreads=nthreads, **base))
    assert np.array_equal(seq.traces, par.traces)


def test_parallel_matches_sequential_elastic():
    base = dict(ngrid=28, nsteps=30, ndamping=6, propagator="elastic_iso")
    seq, _ = run(SimConfig(**base))
    par, _ = run(SimConfig(target="parallel", nthreads=3, **base))
    assert np.array_equal(seq.traces, par.traces)


def test_instability_detected():
    config = SimConfig(ngrid=20, nsteps=300, ndamping=4, dt=5e-3, check_every=50)
    with np.errstate(all="ignore"), pytest.raises(InstabilityError) as err:
        run(config)
    assert err.value.step % 50 == 0
    assert err.value.last_finite == err.value.step - 50
    assert f"check at time step {err.value.step}" in str(err.value)


@pytest.mark.slow
def test_long_run_stays_bounded():
    config = SimConfig(ngrid=40, nsteps=2000, ndamping=8)
    shot, _ = run(config)
    setup = setup_run(config)
    source = ricker(config.fmax, setup.dt, config.nsteps).samples
    peak = np.abs(source).max() * setup.dt ** 2 * setup.model.vmax ** 2
    assert np.all(np.isfinite(shot.traces))
    assert np.abs(shot.traces).max() <= 10 * peak


def _ricker_at(wavelet, t):
    arg = (np.pi * wavelet.peak_frequency * (t - wavelet.t0)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def _analytic_misfit(n, h, distance, nsteps, lag=0):
    """Relative L2 misfit of a point-source trace against ``h^3 w(t - r / v) / (4 pi r)``."""
    v = 2000.0
    center = (n - 1) // 2
    receiver = (center + distance, center, center)
    config = SimConfig(
        ngrid=n,
        dgrid=h,
        nsteps=nsteps,
        source_loc=(center,) * 3,
        receivers=(receiver,),
    )
    shot, report = run(config, constant_model(make_grid(n, h), v))
    dt, r = report.setup.dt, distance * h
    wavelet = ricker(config.fmax, dt, nsteps)
    times = (np.arange(nsteps) + 1 + lag) * dt
    expected = h ** 3 * _ricker_at(wavelet, times - r / v) / (4 * np.pi * r)
    trace = shot.traces[0].astype(np.float64)
    return np.linalg.norm(trace - expected) / np.linalg.norm(expected)


@pytest.mark.slow
def test_point_source_matches_analytic_solution():
    misfit = _analytic_misfit(100, 10.0, 20, 250)
    lagged = _analytic_misfit(100, 10.0, 20, 250, lag=1)
    assert misfit <= 0.05
    assert lagged > 2 * misfit


@pytest.mark.slow
def test_analytic_misfit_drops_under_refinement():
    coarse = _analytic_misfit(60, 20.0, 10, 125)
    fine = _analytic_misfit(120, 10.0, 20, 250)
    assert fine < coarse
    assert fine <= 0.05


def _exit_residual(config, model):
    """Recorded incident peak on the receiver plane and the inner max|p| at the last step."""
    setup = setup_run(config, model)
    propagator = setup.propagator()
    state = propagator.new_state()
    samples = propagator.source_time_function(ricker(config.fmax, setup.dt, config.nsteps)).samples
    n, depth = setup.grid.n, setup.ndamping[2]
    plane = Box((0, 0, depth), (n[0], n[1], depth + 1))
    incident = 0.0
    with SequentialExecutor() as executor:
        for k in range(config.nsteps):
            propagator.step(state, executor, (config.source_loc, samples[k]))
            incident = max(incident, float(np.abs(propagator.pressure_field(state).view(plane)).max()))
    residual = float(np.abs(propagator.pressure_field(state).view(setup.partition.inner)).max())
    return incident, residual


@pytest.mark.slow
def test_cpml_absorbs_outgoing_waves():
    h, v = 20.0, 2000.0
    grid = make_grid(100, h)
    model = constant_model(grid, v)
    loc = (25, 49, 49)
    setup = setup_run(SimConfig(ngrid=100, source_loc=loc), model)
    inner = setup.partition.inner
    corners = np.array([[lo, hi - 1] for lo, hi in zip(inner.lo, inner.hi)])
    farthest = max(
        np.linalg.norm(np.array([cx, cy, cz]) - loc) for cx in corners[0] for cy in corners[1] for cz in corners[2]
    )
    wavelet = ricker(setup.config.fmax, setup.dt, 1)
    leaves = wavelet.t0 + 1.2 / wavelet.peak_frequency + farthest * h / v
    nsteps = int(np.ceil(leaves / setup.dt))

    base = dict(ngrid=100, nsteps=nsteps, source_loc=loc)
    incident, absorbed = _exit_residual(SimConfig(**base), model)
    _, reflected = _exit_residual(SimConfig(cpml=False, **base), model)
    assert absorbed <= 0.01 * incident
    assert reflected >= 0.3 * incident


def _normalized(trace):
    trace = trace - trace.mean()
    return trace / np.linalg.norm(trace)


@pytest.mark.slow
def test_propagators_share_phase():
    grid = make_grid(50, 20.0)
    model = constant_model(grid, 2000.0, vs=0.0, rho=1000.0)
    dt = cfl_dt(model, grid, staggered=True)
    receivers = ((24, 24, 32),)
    traces = {}
    for name in ("acoustic_iso_cd", "acoustic_iso", "elastic_iso"):
        config = SimConfig(
            ngrid=50, nsteps=500, dt=dt, propagator=name, source_loc=(24, 24, 24), receivers=receivers
        )
        shot, _ = run(config, model)
        traces[name] = _normalized(shot.traces[0].astype(np.float64))
    reference = traces["acoustic_iso_cd"]
    for name in ("acoustic_iso", "elastic_iso"):
        corr = np.correlate(traces[name], reference, mode="full")
        lag = int(np.argmax(corr)) - (len(reference) - 1)
        assert abs(lag) <= 1
