"""Coordinator/party runtime: wire format, expressions, parties and transports."""

from .coordinator import Coordinator, ParallelError, RemoteShared
from .expr import E, Expression, Key, parse
from .party import OPS, Party, PartyRole, RemoteTensorKey, TensorStore
from .transport import LocalTransport, PartyServer, TcpDeployment, TcpTransport, local_deployment
from .wire import Frame, MsgType, decode_frame, encode_frame

__all__ = [
    "OPS",
    "Coordinator",
    "E",
    "Expression",
    "Frame",
    "Key",
    "LocalTransport",
    "MsgType",
    "ParallelError",
    "Party",
    "PartyRole",
    "PartyServer",
    "RemoteShared",
    "RemoteTensorKey",
    "TcpDeployment",
    "TcpTransport",
    "TensorStore",
    "decode_frame",
    "encode_frame",
    "local_deployment",
    "parse",
]
