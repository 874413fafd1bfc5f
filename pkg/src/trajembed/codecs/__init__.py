"""Encoders, decoders and embedding postprocessors."""

from .cnn import CNNDecoder, CNNEncoder, Conv2d, cnn_decode, cnn_encode
from .config import ENCODER_KINDS, EncoderConfig
from .ode import CDEEncoder, ODEDecoder, ODEDynamics, ODEEncoder, cde_encode, ode_encode, rk4_solve, spline_path
from .postprocess import (GaussianEmbedding, NFPostprocessor, PlanarFlow, VariationalPostprocessor,
                          nf_postprocess, variational_postprocess)
from .rnn import RNNCell, RNNDecoder, RNNEncoder, argmax_feedback, rnn_decode, rnn_encode, run_cells
from .transformer import (MultiHeadAttention, TransformerDecoder, TransformerEncoder, TransformerLayer,
                          masked_mean, sinusoidal_encoding, transformer_decode, transformer_encode)

__all__ = [
    "CDEEncoder", "CNNDecoder", "CNNEncoder", "Conv2d", "ENCODER_KINDS", "EncoderConfig", "GaussianEmbedding",
    "MultiHeadAttention", "NFPostprocessor", "ODEDecoder", "ODEDynamics", "ODEEncoder", "PlanarFlow",
    "RNNCell", "RNNDecoder", "RNNEncoder", "TransformerDecoder", "TransformerEncoder", "TransformerLayer",
    "VariationalPostprocessor", "argmax_feedback", "cde_encode", "cnn_decode", "cnn_encode", "masked_mean",
    "nf_postprocess", "ode_encode", "rk4_solve", "rnn_decode", "rnn_encode", "run_cells",
    "sinusoidal_encoding", "spline_path", "transformer_decode", "transformer_encode", "variational_postprocess",
]
