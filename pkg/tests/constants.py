EUCLID_CONFIG = """\
[run]
seed = 3

[triple]
metric = "euclid"
"""

MALFORMED_CONFIG = """\
[triple]
metric =
"""

UNKNOWN_TABLE_CONFIG = """\
[triple]
metric = "euclid"

[bogus]
value = 1
"""

LOCAL_PROBE = {"kind": "local", "lam": 8.0, "t0": 0.5, "eps": 0.25}

LENS_XRAY_CONFIG = """\
[run]
seed = 5

[triple]
metric = "gauss1"
covector = "rot-bump:0.1,0.2,0.5,0.3"

[grid]
n_alpha = 24
n_beta = 16
"""

CONFORMAL_CONFIG = """\
[triple]
metric = "conformal:1.05"

[reference]
metric = "euclid"

[grid]
n_alpha = 24
n_beta = 24
pixels = 21
"""

SAME_PAIR_CONFIG = """\
[triple]
metric = "euclid"

[reference]
metric = "euclid"
"""
