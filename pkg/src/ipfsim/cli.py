#!/usr/bin/env python3

# ipfsim
# This file is part of ipfsim.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>

"""
Command-line front end.

    ipfsim orbit --inv-alpha 0.5:3.0 --n 600 --out orbit.csv
    ipfsim orbit --beta 0.164 --seed-explicit 0.3,0 --inv-alpha 0.5:3.5:800 --out fig2.csv
    ipfsim likelihood --target-semitones 15 --grid 120 --out map.csv
    ipfsim centroid --in map.csv --out centroid.csv
    ipfsim sweep --catalog intervals.txt --out centroids.csv
    ipfsim synth --beta1 0.02 --beta2 0.33 --target-semitones 15 --wave gaussian --out tone.wav

Exit codes: 0 success, 1 runtime failure (search or divergence), 2 usage or
invalid input.
"""

# =============================================================================
# Import modules
# =============================================================================
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from ipfsim import __version__, core, dynamics, mapper, synth

logger = logging.getLogger("ipfsim")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


# =============================================================================
# Argument helpers
# =============================================================================
def parse_range(text):
    """Parses `lo:hi` or `lo:hi:n` into (lo, hi, n or None)."""
    parts = str(text).split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"expected lo:hi[:n], got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        n = int(parts[2]) if len(parts) == 3 else None
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi[:n], got {text!r}") from None
    return lo, hi, n


def parse_floats(text):
    """Parses a comma separated list of reals."""
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _betas(values):
    out = []
    for v in values or ():
        out.extend(parse_floats(v) if isinstance(v, str) else np.atleast_1d(v).tolist())
    return tuple(float(b) for b in out)


def _config_value(action, value):
    """Converts one JSON value with the converter of its argparse action."""
    if action.nargs == 0:
        if not isinstance(value, bool):
            raise ValueError("expected true or false")
        return value
    if isinstance(value, bool):
        raise ValueError("expected a value, got a boolean")
    if isinstance(value, list):
        if isinstance(action.default, list):
            for item in value:
                parse_floats(str(item))
            return [str(item) for item in value]
        separator = ":" if action.type is parse_range else ","
        value = separator.join(str(item) for item in value)
    if isinstance(action.default, list):
        parse_floats(str(value))
        return [str(value)]
    if action.type is int and isinstance(value, float) and not value.is_integer():
        raise ValueError(f"expected an integer, got {value}")
    converter = action.type or str
    value = converter(value if isinstance(value, (str, int, float)) else str(value))
    if action.choices is not None and value not in action.choices:
        raise ValueError(f"expected one of {sorted(action.choices)}")
    return value


def apply_config(args):
    """Overrides parsed flags with the JSON document given by --config. Keys
    are long option names with dashes replaced by underscores; every value
    passes through the converter of its option."""
    if not args.config:
        return args
    with open(args.config, encoding="utf-8") as handle:
        document = json.load(handle)
    if not isinstance(document, dict):
        raise core.ParameterError(f"{args.config}: configuration must be a JSON object")
    for key, value in document.items():
        key = key.replace("-", "_")
        action = args.options.get(key)
        if action is None:
            raise core.ParameterError(f"{args.config}: unknown option {key!r} for {args.command}")
        try:
            value = _config_value(action, value)
        except (argparse.ArgumentTypeError, TypeError, ValueError) as error:
            raise core.ParameterError(f"{args.config}: option {key!r}: {error}") from None
        setattr(args, key, value)
    return args


def _map_protocol(args):
    parM = mapper.DefaultMapProtocol()
    for key in ("grid", "beta_max", "n_alpha", "n_seeds", "n_steps", "tail", "tol_semitones", "h", "eps", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            parM[key] = value
    return parM


def _sweep(args):
    lo, hi, n = args.inv_alpha
    n = args.n if args.n is not None else n
    return (lo, hi), (n if n is not None else 600)


# =============================================================================
# Subcommands
# =============================================================================
def cmd_orbit(args):
    """Writes an orbit diagram CSV."""
    inv_range, n_alpha = _sweep(args)
    betas = _betas(args.beta)
    diagram = dynamics.orbit_diagram(
        betas, inv_range, n_alpha, args.steps, args.tail, args.g0, args.seed_explicit
    )
    dynamics.write_orbit_csv(diagram, args.out)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def cmd_regimes(args):
    """Writes a regime table CSV."""
    inv_range, n_alpha = _sweep(args)
    protocol = {"n_steps": args.steps, "tail": args.tail, "g0": args.g0, "tol": args.tol, "p_max": args.p_max}
    regimes = dynamics.regime_map(_betas(args.beta), inv_range, n_alpha, protocol, args.seed_explicit)
    dynamics.write_regime_csv(regimes, args.out)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def cmd_likelihood(args):
    """Writes a likelihood map CSV for one target interval."""
    target = mapper.Interval.from_semitones(args.target_semitones)
    lmap = mapper.likelihood_map(None, target, _map_protocol(args))
    if lmap.is_empty:
        logger.warning("no cell produces %.3f semitones, map is all zero", target.semitones)
    mapper.write_map_csv(lmap, args.out)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def cmd_centroid(args):
    """Writes the 90-percent region centroid of a stored likelihood map."""
    target = None if args.target_semitones is None else mapper.Interval.from_semitones(args.target_semitones)
    lmap = mapper.read_map_csv(args.input, target)
    result = mapper.centroid(lmap, args.level)
    mapper.write_centroid_csv([result], args.out)
    logger.info("centroid beta1=%.4f beta2=%.4f over %d cells", result.beta1, result.beta2, result.region_cell_count)
    return EXIT_OK


def cmd_sweep(args):
    """Runs the catalog scan or writes the maximum-interval map."""
    protocol = _map_protocol(args)
    if args.max_interval:
        mapper.write_map_csv(mapper.max_interval_map(None, protocol), args.out)
    else:
        intervals = mapper.load_catalog(args.catalog) if args.catalog else mapper.sample_catalog()
        mapper.write_centroid_csv(mapper.catalog_scan(intervals, protocol), args.out)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def cmd_synth(args):
    """Renders a multiphonic to WAV, plus score and spectrogram CSVs."""
    out = Path(args.out)
    betas = (args.beta1, args.beta2)
    protocol = _map_protocol(args)
    protocol["g0"] = args.g0

    if args.alpha is not None:
        target_alpha = args.alpha
    elif args.target_semitones is not None:
        target = mapper.Interval.from_semitones(args.target_semitones)
        target_alpha = mapper.best_alpha(args.beta1, args.beta2, target, protocol)
        if target_alpha is None:
            logger.error("cell (%g, %g) does not produce %.2f semitones", args.beta1, args.beta2, target.semitones)
            return EXIT_RUNTIME
        logger.info("plateau alpha %.4f for %.2f semitones", target_alpha, target.semitones)
    else:
        raise core.ParameterError("synth needs --alpha or --target-semitones")

    params = core.IpfParams(target_alpha, betas, args.g0)
    params.check_constraints()
    n_steps = max(8, int(round(args.duration * args.f0)))
    if args.envelope:
        audio, rate = synth.read_wav(args.envelope)
        envelope = synth.resample_envelope(synth.extract_envelope(audio, rate, args.window_ms), n_steps)
    else:
        envelope = synth.attack_plateau_envelope(n_steps, args.attack)
    alphas = synth.envelope_to_alpha(envelope, params, target_alpha)
    score = synth.run_score(alphas, params, args.layers, args.f0, args.sample_rate)

    if args.wave == "gaussian":
        period = synth.gaussian_period(args.f0, args.sample_rate)
    else:
        recording, rate = synth.read_wav(args.wave)
        period = synth.sampled_period(recording, rate)

    audio = synth.render(score, period, args.layers, args.peak)
    synth.write_wav(out, audio, args.sample_rate)
    score_out = args.score_out or out.with_name(out.stem + "-score.csv")
    spectrogram_out = args.spectrogram_out or out.with_name(out.stem + "-spectrogram.csv")
    synth.write_score_csv(score, score_out, args.layers)
    spec = synth.spectrogram(audio, args.sample_rate, args.window_size, args.hop)
    synth.write_spectrogram_csv(spec, spectrogram_out)
    logger.info("wrote %s, %s, %s", out, score_out, spectrogram_out)
    return EXIT_OK


def cmd_envelope(args):
    """Writes the RMS envelope of a WAV file."""
    audio, rate = synth.read_wav(args.input)
    envelope = synth.extract_envelope(audio, rate, args.window_ms)
    hop = max(1, int(round(rate * args.window_ms / 1000.0)))
    times = (np.arange(envelope.size) + 0.5) * hop / rate
    pd.DataFrame.from_dict({"time_s": times, "envelope": envelope}).to_csv(
        args.out, index=False, float_format="%.9g"
    )
    logger.info("wrote %s", args.out)
    return EXIT_OK


# =============================================================================
# Parser
# =============================================================================
def _add_sweep_options(parser):
    parser.add_argument("--beta", action="append", default=[],
                        help="reflection strength beta_k (dimensionless); repeat or comma separate")
    parser.add_argument("--inv-alpha", type=parse_range, default=(0.5, 3.0, None),
                        help="swept 1/alpha range lo:hi[:n] (dimensionless, default 0.5:3.0)")
    parser.add_argument("--n", type=int, default=None, help="number of 1/alpha values (default 600)")
    parser.add_argument("--steps", type=int, default=2500, help="iteration steps per column")
    parser.add_argument("--tail", type=int, default=250, help="trailing states kept per column")
    parser.add_argument("--g0", type=float, default=0.5, help="seed state g0")
    parser.add_argument("--seed-explicit", type=parse_floats, default=None,
                        help="explicit seeds newest first g,g-,... (e.g. 0.3,0)")
    parser.add_argument("--out", required=True, help="output CSV path")


def _add_map_options(parser):
    parser.add_argument("--grid", type=int, default=None, help="cells per beta axis (default 120)")
    parser.add_argument("--beta-max", type=float, default=None, help="upper end of both beta axes (default 0.5)")
    parser.add_argument("--n-alpha", type=int, default=None, help="alpha values in (0, 1] per cell (default 200)")
    parser.add_argument("--n-seeds", type=int, default=None, help="seeds in ]0, 5] for reliability (default 150)")
    parser.add_argument("--n-steps", type=int, default=None, help="iteration steps (default 2500)")
    parser.add_argument("--tail", type=int, default=None, help="trailing states classified (default 250)")
    parser.add_argument("--tol-semitones", type=float, default=None,
                        help="interval match tolerance in semitones (default 0.25)")
    parser.add_argument("--h", type=float, default=None, help="finite-difference step in alpha (default 1e-3)")
    parser.add_argument("--eps", type=float, default=None, help="derivative floor (default 1e-6)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ipfsim",
        description="Impulse Pattern Formulation: orbit diagrams, multiphonic maps and synthesis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes for grid evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="JSON file overriding the options of this command")
        p.set_defaults(func=func)
        return p

    p = add("orbit", cmd_orbit, "orbit diagram over 1/alpha as CSV inv_alpha,sample_index,g")
    _add_sweep_options(p)

    p = add("regimes", cmd_regimes, "regime per 1/alpha as CSV inv_alpha,alpha,kind,period,limit_values")
    _add_sweep_options(p)
    p.add_argument("--tol", type=float, default=1e-6, help="relative period-detection tolerance")
    p.add_argument("--p-max", type=int, default=64, help="longest period searched for")

    p = add("likelihood", cmd_likelihood, "likelihood map over (beta1, beta2) for one interval")
    p.add_argument("--target-semitones", type=float, required=True, help="target interval in semitones")
    _add_map_options(p)
    p.add_argument("--out", required=True, help="output map CSV path")

    p = add("centroid", cmd_centroid, "weighted centroid of the 90-percent likelihood region of a map CSV")
    p.add_argument("--in", dest="input", required=True, help="likelihood map CSV")
    p.add_argument("--target-semitones", type=float, default=None, help="target interval in semitones (label only)")
    p.add_argument("--level", type=float, default=0.9, help="region threshold as fraction of the maximum")
    p.add_argument("--out", required=True, help="output centroid CSV path")

    p = add("sweep", cmd_sweep, "catalog scan of centroids, or the maximum-interval map")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--catalog", default=None,
                        help="text file with one interval in semitones per line (default: packaged sample)")
    source.add_argument("--max-interval", action="store_true",
                        help="write the maximum interval (semitones) per cell instead")
    _add_map_options(p)
    p.add_argument("--out", required=True, help="output CSV path")

    p = add("synth", cmd_synth, "render a multiphonic by period concatenation")
    p.add_argument("--beta1", type=float, required=True, help="first reflection strength (dimensionless)")
    p.add_argument("--beta2", type=float, required=True, help="second reflection strength (dimensionless)")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--target-semitones", type=float, help="interval in semitones, selects the plateau alpha")
    target.add_argument("--alpha", type=float, help="plateau alpha (dimensionless)")
    p.add_argument("--wave", default="gaussian", help="'gaussian' or a WAV file to cut one period from")
    p.add_argument("--envelope", default=None, help="WAV file whose RMS envelope drives alpha")
    p.add_argument("--attack", type=float, default=0.3, help="attack fraction of the synthetic envelope")
    p.add_argument("--duration", type=float, default=3.0, help="nominal duration in seconds")
    p.add_argument("--f0", type=float, default=165.0, help="reference pitch in Hz")
    p.add_argument("--sample-rate", type=int, default=44100, help="sample rate in Hz")
    p.add_argument("--layers", type=int, default=2, help="number of layered past-state signals")
    p.add_argument("--peak", type=float, default=0.9, help="output peak as fraction of full scale")
    p.add_argument("--g0", type=float, default=2.5, help="seed state g0")
    p.add_argument("--window-ms", type=float, default=20.0, help="envelope RMS window in milliseconds")
    p.add_argument("--window-size", type=int, default=2048, help="spectrogram window in samples (power of two)")
    p.add_argument("--hop", type=int, default=512, help="spectrogram hop in samples")
    p.add_argument("--score-out", default=None, help="score CSV path (default <out>-score.csv)")
    p.add_argument("--spectrogram-out", default=None,
                   help="spectrogram CSV time_s,freq_hz,magnitude (default <out>-spectrogram.csv)")
    _add_map_options(p)
    p.add_argument("--out", required=True, help="output WAV path (16-bit PCM mono)")

    p = add("envelope", cmd_envelope, "RMS envelope of a WAV file as CSV time_s,envelope")
    p.add_argument("--in", dest="input", required=True, help="input WAV file")
    p.add_argument("--window-ms", type=float, default=20.0, help="RMS window in milliseconds")
    p.add_argument("--out", required=True, help="output CSV path")

    skip = {"help", "version", "command", "config", "verbose", "quiet"}
    for p in sub.choices.values():
        p.set_defaults(options={a.dest: a for a in parser._actions + p._actions if a.dest not in skip})
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        apply_config(args)
        return args.func(args)
    except (core.ParameterError, OSError, json.JSONDecodeError) as error:
        print(f"ipfsim {args.command}: {error}", file=sys.stderr)
        return EXIT_USAGE
    except core.IpfError as error:
        print(f"ipfsim {args.command}: {error}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
