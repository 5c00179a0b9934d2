import pytest

from app.errors import ProtocolError
from app.models import GradientMessage, MessageType, ParamsPayload
from app.transport import InProcessTransport, decode_envelope, encode_envelope, grad_envelope, params_envelope


class EchoWorker:
    def __init__(self, node_id):
        self.node_id = node_id

    def step(self, payload):
        return GradientMessage(node_id=self.node_id, iteration=payload.iteration, group=self.node_id,
                               indices=[self.node_id], values=[0.5], circuit_executions=3)


class TestEnvelope:
    def test_single_line(self):
        line = encode_envelope(MessageType.converged, 4, {"converged": True})
        assert line.endswith("\n") and line.count("\n") == 1
        envelope = decode_envelope(line)
        assert envelope.type == MessageType.converged and envelope.iteration == 4

    def test_params_payload(self):
        payload = ParamsPayload(iteration=2, theta=[0.1, 0.2], batch=[3], assignment=[0], groups=[[0, 1]],
                                threshold=0.1, residuals={0: [0.0, 0.05]})
        decoded = ParamsPayload.model_validate(decode_envelope(params_envelope(payload)).payload)
        assert decoded == payload

    def test_grad_message(self):
        message = GradientMessage(node_id=1, iteration=0, group=1, indices=[2], values=[-0.25],
                                  circuit_executions=15, sparse=True, residual=[0.0, 0.01])
        assert GradientMessage.model_validate(decode_envelope(grad_envelope(message)).payload) == message

    @pytest.mark.parametrize("line", ["", "{", '{"type": "nope", "iteration": 0}', '{"a": 1}\n{"b": 2}'])
    def test_rejects_malformed(self, line):
        with pytest.raises(ProtocolError):
            decode_envelope(line)

    def test_message_validation(self):
        with pytest.raises(ValueError):
            GradientMessage(node_id=0, iteration=0, group=0, indices=[0, 1], values=[0.1], circuit_executions=1)
        with pytest.raises(ValueError):
            GradientMessage(node_id=0, iteration=0, group=0, indices=[0], values=[float("nan")],
                            circuit_executions=1)


class TestInProcessTransport:
    @pytest.mark.parametrize("threads", [1, 3])
    def test_one_message_per_worker(self, threads):
        transport = InProcessTransport([EchoWorker(n) for n in range(3)], threads=threads)
        payload = ParamsPayload(iteration=0, theta=[0.0] * 3, batch=[0], assignment=[0, 1, 2],
                                groups=[[0], [1], [2]])
        try:
            messages = transport.exchange(payload)
        finally:
            transport.close()
        assert [m.node_id for m in messages] == [0, 1, 2]
