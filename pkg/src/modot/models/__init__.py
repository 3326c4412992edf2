from .casm import CASM, ChannelAttention, MSSFuse, PlainBridge
from .encoder import ConvEncoder, WindowEncoder, build_encoder, normalize_image
from .heads import EIP, PPM, SSR, DepthDecoderBlock, OBDecoderBlock
from .modot import MoDOT, Stage1, Stage1Output, Stage2Output, build_model, pad_to_multiple, unpad

__all__ = [
    "CASM", "ChannelAttention", "ConvEncoder", "DepthDecoderBlock", "EIP", "MSSFuse", "MoDOT", "OBDecoderBlock",
    "PPM", "PlainBridge", "SSR", "Stage1", "Stage1Output", "Stage2Output", "WindowEncoder", "build_encoder",
    "build_model", "normalize_image", "pad_to_multiple", "unpad",
]
