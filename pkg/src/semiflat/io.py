"""JSON readers and writers for networks, datasets and reports.

Floats are written with Python's shortest round-trip representation, so a
write followed by a read reproduces every value bit for bit.
"""

import json
import math

import numpy as np

from .errors import Usage
from .network import Dataset, NetworkParams


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj):
    return json.dumps(_plain(obj), indent=1, sort_keys=False)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise Usage(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise Usage(f"{path} is not valid JSON: {exc.msg}") from exc


def network_to_dict(net):
    return {
        "activation": net.activation.value,
        "input_dim": net.input_dim,
        "hidden": net.hidden,
        "output_dim": net.output_dim,
        "w": net.w,
        "v": net.v,
    }


def network_from_dict(d):
    try:
        net = NetworkParams(d["activation"], d["w"], d["v"])
        dims = (d["input_dim"], d["hidden"], d["output_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise Usage(f"malformed network: {exc}") from exc
    if dims != (net.input_dim, net.hidden, net.output_dim):
        raise Usage(f"declared dims {dims} disagree with the weight arrays")
    return net


def dataset_to_dict(data):
    return {"loss": data.loss.value, "inputs": data.inputs, "targets": data.targets}


def dataset_from_dict(d):
    try:
        return Dataset(d["inputs"], d["targets"], d.get("loss", "squared"))
    except (KeyError, TypeError, ValueError) as exc:
        raise Usage(f"malformed dataset: {exc}") from exc


def read_network(path):
    return network_from_dict(read_json(path))


def read_dataset(path):
    return dataset_from_dict(read_json(path))
