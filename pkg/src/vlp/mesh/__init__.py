"""Message transport and the four-node positioning pipeline."""

from vlp.mesh.bus import InProcessBus, Subscription, TcpBus, TcpHub
from vlp.mesh.nodes import LatencyReport
from vlp.mesh.pipeline import PipelineResult, run_pipeline
from vlp.mesh.wire import ImageBody, PositionBody, ServiceCall, TopicMessage, decode, encode

__all__ = ["InProcessBus", "Subscription", "TcpBus", "TcpHub", "LatencyReport", "PipelineResult",
           "run_pipeline", "ImageBody", "PositionBody", "ServiceCall", "TopicMessage", "decode", "encode"]
