from simpleray.charts_gauge import BoundaryJet, GaugeElement, act, alignment_gauge
from simpleray.config import Config
from simpleray.exceptions import SimplerayError
from simpleray.geodesics import InflowGrid, boundary_distance, distance_table, shoot
from simpleray.manifold import CoefficientTriple, Domain
from simpleray.recovery import holder_experiment, recover_boundary_jet
from simpleray.registry import triple_from_ids
from simpleray.wavesolver import ProbeDictionary, dn_operator_gap, fdtd_solve
from simpleray.wkb import DnRecord, ProbeConfig, synth_dn
from simpleray.xray import RayTable, Sinogram, invert_xray, xray

__all__ = [
    "BoundaryJet",
    "CoefficientTriple",
    "Config",
    "DnRecord",
    "Domain",
    "GaugeElement",
    "InflowGrid",
    "ProbeConfig",
    "ProbeDictionary",
    "RayTable",
    "Sinogram",
    "SimplerayError",
    "act",
    "alignment_gauge",
    "boundary_distance",
    "distance_table",
    "dn_operator_gap",
    "fdtd_solve",
    "holder_experiment",
    "invert_xray",
    "recover_boundary_jet",
    "shoot",
    "synth_dn",
    "triple_from_ids",
    "xray",
]
