import json
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from torsionpinn import __version__
from torsionpinn.network import init_params, save_checkpoint
from torsionpinn.parametric1d import ParametricProblem, Predictor
from torsionpinn.server import BadRequest, parse_request, serve_in_thread


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    prob = ParametricProblem(hidden_layers=(8, 8))
    path = save_checkpoint(tmp_path_factory.mktemp("srv") / "m.ckpt", init_params(prob.spec, 3) + 0.05,
                           prob.spec)
    predictor = Predictor(str(path))
    server, thread = serve_in_thread(predictor)
    yield predictor, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def post(url, payload):
    body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
    req = urllib.request.Request(url + "/predict", data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def test_health(service):
    _, url = service
    with urllib.request.urlopen(url + "/health", timeout=10) as resp:
        assert json.loads(resp.read()) == {"status": "ok", "version": __version__}


def test_predict_is_bit_exact(service):
    predictor, url = service
    xs = [0.0, 0.123, 0.5, 1.0]
    code, data = post(url, {"x": xs, "T": 3.5, "m": 0.61, "sigma": 0.45})
    assert code == 200 and data["extrapolated"] is False
    assert np.array_equal(np.array(data["phi"]), predictor(np.array(xs), 3.5, 0.61, 0.45).phi)
    code, data = post(url, {"x": 0.5, "T": 30.0, "m": 0.61, "sigma": 0.45})
    assert code == 200 and data["extrapolated"] is True and len(data["phi"]) == 1


def test_bad_requests(service):
    _, url = service
    assert post(url, b"{not json")[0] == 400
    assert post(url, {"x": [0.1], "T": 1.0, "m": 0.5})[0] == 400
    assert post(url, {"x": ["a"], "T": 1.0, "m": 0.5, "sigma": 0.3})[0] == 400
    assert post(url, {"x": [0.1], "T": 1.0, "m": 0.5, "sigma": -0.3})[0] == 400
    with pytest.raises(urllib.error.HTTPError):
        urllib.request.urlopen(url + "/nothing", timeout=10)


def test_concurrent_requests(service):
    predictor, url = service
    payloads = [{"x": [0.1 * k, 0.9], "T": 1.0 + k, "m": 0.7, "sigma": 0.5} for k in range(8)]
    with ThreadPoolExecutor(4) as pool:
        results = list(pool.map(lambda p: post(url, p), payloads))
    for p, (code, data) in zip(payloads, results):
        assert code == 200
        assert np.array_equal(data["phi"], predictor(np.array(p["x"]), p["T"], p["m"], p["sigma"]).phi)


def test_parse_request_errors():
    with pytest.raises(BadRequest):
        parse_request(b"[1, 2]")
    with pytest.raises(BadRequest):
        parse_request(json.dumps({"x": [float("nan")], "T": 1, "m": 0.5, "sigma": 0.3}).encode())
    x, T, m, s = parse_request(b'{"x": 0.25, "T": 2, "m": 0.5, "sigma": 0.3}')
    assert x.tolist() == [0.25] and (T, m, s) == (2.0, 0.5, 0.3)
