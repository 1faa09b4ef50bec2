"""
Parsing SMILES and computing descriptors
========================================

"""

import warnings

from polycascade.descriptors import compute_descriptors, fit_additive_encoder, encode_additives
from polycascade.molgraph import SmilesError, SmilesWarning, parse_smiles

# a repeat unit with wildcard end markers
g = parse_smiles("*CC(c1ccccc1)*")
print(g.dump())
print("rings:", g.ring_count, "aromatic atoms:", sum(a.aromatic for a in g.atoms))

for name, value in compute_descriptors(g).as_dict().items():
    print(f"  {name:24s} {value:g}")

# stereo marks are dropped with a warning
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always", SmilesWarning)
    parse_smiles("F/C=C/F")
print("warning:", caught[0].message)

# errors carry the character offset
try:
    parse_smiles("C1CC")
except SmilesError as exc:
    print("error:", exc)

# additives become flag/amount column pairs
enc = fit_additive_encoder([("silica", 30), ("plasticizerA", 5)])
print(enc.column_names, encode_additives(enc, ("silica", 30)))
