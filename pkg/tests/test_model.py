import torch

from semspeech.dims import ModelDims
from semspeech.model import Transceiver
from semspeech.nn.layers import count_parameters


def test_full_size_model_shapes():
    with torch.device("meta"):
        m = Transceiver(ModelDims(), 1001, ["AA", "IY", "S"])
    shapes = {n: tuple(p.shape) for n, p in m.named_parameters()}
    assert m.special_id == 1000
    assert shapes["ctc.fc.op.weight"] == (1003, 1024)
    assert shapes["encoder.aligner.out_fc.op.weight"] == (1001, 1024)
    assert shapes["semantic_decoder.fc.op.weight"] == (1001, 1024)
    assert shapes["channel_encoder.fc2.op.weight"] == (64, 256)
    assert shapes["channel_decoder.fc1.op.weight"] == (256, 64)
    assert shapes["channel_decoder.fc2.op.weight"] == (1024, 256)
    assert shapes["encoder.aligner.key_fc.op.weight"] == (300, 1024)
    assert shapes["encoder.aligner.loc_conv.op.weight"] == (10, 1, 201)
    assert count_parameters(m) > 50_000_000
