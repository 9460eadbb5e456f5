import math
from fractions import Fraction

import numpy as np
import pytest

from src.engine import DCInstance
from src.oracles import QuadraticOracle
from src.utils import instance_hash, jsonable, parse_vector


def test_instance_hash_ignores_key_order():
    a = {"f1": {"mu": 1, "L": math.inf}, "f2": {"mu": Fraction(1, 2), "L": 3}}
    b = {"f2": {"L": 3, "mu": 0.5}, "f1": {"L": "inf", "mu": 1}}
    assert instance_hash(a) == instance_hash(b)
    assert len(instance_hash(a)) == 16
    assert instance_hash(a) != instance_hash({"f1": a["f1"]})


def test_instance_id_follows_content():
    f = QuadraticOracle([[2.0]])
    g = QuadraticOracle([[1.0]])
    assert DCInstance(f, g).instance_id == DCInstance(f, QuadraticOracle([[1.0]])).instance_id
    assert DCInstance(f, g).instance_id != DCInstance(g, f).instance_id


def test_jsonable():
    value = jsonable({1: (np.float64(0.5), np.arange(2), Fraction(1, 4), -math.inf)})
    assert value == {"1": [0.5, [0, 1], 0.25, "-inf"]}


def test_parse_vector():
    np.testing.assert_allclose(parse_vector("1, 2.5,"), [1.0, 2.5])
    with pytest.raises(ValueError):
        parse_vector("1,x")
