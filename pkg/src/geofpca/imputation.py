"""Fitted-model assembly, spectral imputation, and the interpolation baseline.

``fit_geofpca`` runs the full pipeline in order: wavelength selection, mean
fit, per-footprint error covariances, signal covariance, eigendecomposition,
scores, score-noise variances, spatial-dependence screening, then empirical
variograms and WLS fits per retained component. The resulting model imputes a
spectrum at any location as the mean plus the kriged-score reconstruction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import (GeoLocation, SpectralDataset, WavelengthSet,
                      common_wavelengths)
from .errors import DataError, GeofpcaError, NumericalError
from .fpca import (CovarianceMatrix, FpcaBasis, ScoreField,
                   compute_score_noise_variance, compute_scores,
                   eigendecompose, estimate_error_covariance,
                   estimate_signal_covariance)
from .geostat import (SpatialTestResult, VariogramBins, VariogramFit,
                      empirical_semivariogram, fit_variogram_wls, krige_score,
                      spatial_dependence_test)
from .mean_model import MeanModel, evaluate_mean, fit_mean_model

ScoreTransform = Callable[[ScoreField, SpectralDataset], ScoreField]


@dataclass
class FitConfig:
    """Tunables for the fitting pipeline, echoed into every saved model."""

    fve_threshold: float = 0.99
    min_coverage: float = 1.0
    covariates: str = "latitude"
    max_lat_span: float = 0.6
    max_gap_km: float = math.inf
    bins: VariogramBins = field(default_factory=VariogramBins)
    weight_scheme: str = "nh2"
    n_perm: int = 999
    alpha: float = 0.05
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "fve_threshold": self.fve_threshold,
            "min_coverage": self.min_coverage,
            "covariates": self.covariates,
            "max_lat_span": self.max_lat_span,
            "max_gap_km": self.max_gap_km if math.isfinite(self.max_gap_km) else None,
            "bins": {"n_bins": self.bins.n_bins, "max_fraction": self.bins.max_fraction,
                     "min_pairs": self.bins.min_pairs},
            "weight_scheme": self.weight_scheme,
            "n_perm": self.n_perm,
            "alpha": self.alpha,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        b = d.get("bins", {})
        gap = d.get("max_gap_km")
        return cls(
            fve_threshold=d.get("fve_threshold", 0.99),
            min_coverage=d.get("min_coverage", 1.0),
            covariates=d.get("covariates", "latitude"),
            max_lat_span=d.get("max_lat_span", 0.6),
            max_gap_km=math.inf if gap is None else float(gap),
            bins=VariogramBins(b.get("n_bins", 15), b.get("max_fraction", 0.5),
                               b.get("min_pairs", 10)),
            weight_scheme=d.get("weight_scheme", "nh2"),
            n_perm=d.get("n_perm", 999),
            alpha=d.get("alpha", 0.05),
            seed=d.get("seed", 0),
        )


@dataclass
class GeoFpcaModel:
    """Everything needed to impute spectra in the fitted region."""

    region: tuple[float, float]
    wavelengths: WavelengthSet
    mean: MeanModel
    basis: FpcaBasis
    scores: ScoreField
    fits: list[VariogramFit | None]
    tests: list[SpatialTestResult | None]
    config: FitConfig

    def dependent(self, k: int) -> bool:
        """Spatial dependence decision for component k (default True if untested)."""
        t = self.tests[k]
        return True if t is None else t.dependent


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except GeofpcaError as e:
        raise type(e)(f"[{name}] {e}") from e


def fit_geofpca(ds: SpectralDataset, config: FitConfig | None = None,
                score_transform: ScoreTransform | None = None) -> GeoFpcaModel:
    """Fit the full geospatial functional model on one homogeneous region.

    ``score_transform``, when given, is applied to the score field after the
    score-noise variances are attached and before the spatial screening and
    variogram fits (used for local-linear score smoothing in unmixing).
    Sub-step failures carry their pipeline stage in the message.
    """
    config = config or FitConfig()
    if len(ds) == 0:
        raise DataError("empty dataset")
    span = float(ds.latitudes.max() - ds.latitudes.min())
    if span > config.max_lat_span:
        raise DataError(
            f"latitude span {span:.4g} deg exceeds the homogeneity guard "
            f"{config.max_lat_span} deg; split the region into smaller windows"
        )
    region = (float(ds.latitudes.min()), float(ds.latitudes.max()))
    ws = _stage("wavelength-selection", common_wavelengths, ds, config.min_coverage)
    mean = _stage("mean-model", fit_mean_model, ds, ws, config.covariates)
    errs: dict[int, CovarianceMatrix] = {}
    for p in ds.footprints_present():
        errs[p] = _stage("error-covariance", estimate_error_covariance,
                         ds, ws, p, config.max_gap_km)
    signal = _stage("signal-covariance", estimate_signal_covariance, ds, mean, errs)
    basis = _stage("eigendecomposition", eigendecompose, signal, config.fve_threshold)
    scores = _stage("scores", compute_scores, ds, mean, basis)
    scores.taus = {p: compute_score_noise_variance(errs[p], basis) for p in errs}
    if score_transform is not None:
        scores = _stage("score-smoothing", score_transform, scores, ds)

    tests: list[SpatialTestResult | None] = []
    fits: list[VariogramFit | None] = []
    for k in range(basis.K):
        if scores.sounding_ids.size >= 20:
            try:
                test = spatial_dependence_test(scores, k, ds, config.n_perm,
                                               config.alpha, config.seed)
            except DataError:
                # Degenerate (constant) scores: the reduced mean predictor is exact.
                test = SpatialTestResult(k, math.nan, 1.0, False,
                                         config.n_perm, config.alpha)
        else:
            test = None  # too few soundings to screen; keep the kriging path
        tests.append(test)
        try:
            ev = empirical_semivariogram(scores, k, ds, config.bins)
            fits.append(fit_variogram_wls(ev, config.weight_scheme))
        except GeofpcaError as e:
            if test is None or test.dependent:
                raise type(e)(f"[variogram k={k}] {e}") from e
            fits.append(None)  # unused by the reduced predictor
    return GeoFpcaModel(region, ws, mean, basis, scores, fits, tests, config)


def predict_scores(model: GeoFpcaModel, target: GeoLocation
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Kriged (or reduced) score predictions and variances at a location."""
    k_total = model.basis.K
    preds = np.empty(k_total)
    variances = np.empty(k_total)
    for k in range(k_total):
        preds[k], variances[k] = krige_score(
            target, model.scores, k, model.fits[k], None,
            dependent=model.dependent(k),
            marginal_variance=float(model.basis.eigenvalues[k]),
        )
    return preds, variances


def impute_radiance(model: GeoFpcaModel, target: GeoLocation, footprint: int
                    ) -> np.ndarray:
    """Impute the full spectrum at a location: mean plus score reconstruction."""
    spectrum = evaluate_mean(model.mean, target, footprint)
    preds, _ = predict_scores(model, target)
    spectrum = spectrum + model.basis.eigenvectors @ preds
    if not np.all(np.isfinite(spectrum)):
        raise NumericalError("imputed spectrum is not finite")
    return spectrum


def interpolate_radiance(ds: SpectralDataset, target: GeoLocation, footprint: int,
                         ws: WavelengthSet | None = None) -> np.ndarray:
    """Per-wavelength linear interpolation in latitude over one footprint.

    The baseline method: each wavelength is interpolated between the nearest
    same-footprint soundings below and above the target latitude, with
    nearest-value extrapolation outside the observed range.
    """
    rows = np.flatnonzero(ds.footprints == footprint)
    if rows.size < 2:
        raise DataError(
            f"footprint {footprint}: {rows.size} soundings, need >= 2 to interpolate"
        )
    order = np.argsort(ds.latitudes[rows], kind="stable")
    rows = rows[order]
    lats = ds.latitudes[rows]
    pos = ws.positions if ws is not None else np.arange(ds.grid_length)
    y = ds.radiance[np.ix_(rows, pos)]
    out = np.empty(pos.size)
    x0 = target.latitude
    complete = ~np.isnan(y).any(axis=0)
    if complete.any():
        idx = np.searchsorted(lats, x0)
        if idx == 0:
            out[complete] = y[0, complete]
        elif idx == lats.size:
            out[complete] = y[-1, complete]
        else:
            t = (x0 - lats[idx - 1]) / (lats[idx] - lats[idx - 1])
            out[complete] = (1 - t) * y[idx - 1, complete] + t * y[idx, complete]
    for j in np.flatnonzero(~complete):
        good = ~np.isnan(y[:, j])
        if not good.any():
            w_label = int(ws.indices[j]) if ws is not None else int(pos[j]) + 1
            raise DataError(
                f"footprint {footprint}: wavelength w_{w_label} has no observed values"
            )
        out[j] = np.interp(x0, lats[good], y[good, j])
    return out


def save_model(model: GeoFpcaModel, path) -> None:
    """Serialize a fitted model to a single JSON document."""
    doc = {
        "format": "geofpca-model",
        "version": 1,
        "region": [model.region[0], model.region[1]],
        "wavelengths": list(model.wavelengths.indices),
        "mean": model.mean.to_dict(),
        "basis": {
            "eigenvalues": [float(v) for v in model.basis.eigenvalues],
            "eigenvectors": [float(v) for v in model.basis.eigenvectors.ravel(order="C")],
            "K": model.basis.K,
            "fve_curve": [float(v) for v in model.basis.fve_curve],
        },
        "scores": {
            "sounding_ids": [int(i) for i in model.scores.sounding_ids],
            "values": {str(int(i)): [float(v) for v in row]
                       for i, row in zip(model.scores.sounding_ids, model.scores.scores)},
            "latitudes": [float(v) for v in model.scores.latitudes],
            "longitudes": [float(v) for v in model.scores.longitudes],
            "footprints": [int(v) for v in model.scores.footprints],
            "taus": {str(p): [float(v) for v in tau]
                     for p, tau in sorted(model.scores.taus.items())},
            "excluded_ids": [int(i) for i in model.scores.excluded_ids],
        },
        "fits": [None if f is None else f.to_dict() for f in model.fits],
        "tests": [None if t is None else t.to_dict() for t in model.tests],
        "config": model.config.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n")


def load_model(path) -> GeoFpcaModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "geofpca-model":
        raise DataError(f"{path}: not a model file")
    ws = WavelengthSet(tuple(doc["wavelengths"]))
    mean = MeanModel.from_dict(doc["mean"], ws)
    b = doc["basis"]
    k = int(b["K"])
    basis = FpcaBasis(
        np.asarray(b["eigenvalues"], dtype=float),
        np.asarray(b["eigenvectors"], dtype=float).reshape(ws.size, k),
        k,
        np.asarray(b["fve_curve"], dtype=float),
        ws,
    )
    s = doc["scores"]
    ids = np.asarray(s["sounding_ids"], dtype=int)
    scores = ScoreField(
        ids,
        np.array([s["values"][str(int(i))] for i in ids], dtype=float).reshape(len(ids), k),
        np.asarray(s["latitudes"], dtype=float),
        np.asarray(s["longitudes"], dtype=float),
        np.asarray(s["footprints"], dtype=int),
        {int(p): np.asarray(tau, dtype=float) for p, tau in s["taus"].items()},
        tuple(s["excluded_ids"]),
    )
    fits = [None if f is None else VariogramFit.from_dict(f) for f in doc["fits"]]
    tests = [None if t is None else SpatialTestResult.from_dict(t) for t in doc["tests"]]
    return GeoFpcaModel((doc["region"][0], doc["region"][1]), ws, mean, basis,
                        scores, fits, tests, FitConfig.from_dict(doc["config"]))
