"""FastMCP Server for Latent-IMH experiments - Model Context Protocol Implementation"""

import asyncio
import os
import sys
import logging
from typing import Any, Dict, List

# Add parent directory to path for the latent_imh package
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

import numpy as np
from fastmcp import FastMCP
from dotenv import load_dotenv
from pydantic import ValidationError

from latent_imh.analytics import DiagonalSpec, expected_kl_diagonal
from latent_imh.config import Settings, parse_config
from latent_imh.exceptions import ConfigError, LatentImhError
from latent_imh.experiment import ExperimentRunner

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='[%(levelname)s] %(asctime)s - %(name)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Initialize FastMCP
mcp = FastMCP("Latent-IMH MCP Server")

try:
    settings = Settings()
    logger.info(f"✅ Runtime settings loaded: threads={settings.threads}")
except ValidationError as e:
    logger.error(f"❌ Invalid LATENT_IMH_* environment: {e}")
    logger.warning("⚠️  Falling back to default settings")
    settings = Settings.model_construct(threads=1)


def check_config(config: Dict[str, Any]) -> Dict[str, Any]:
    try:
        parse_config(config)
    except ConfigError as e:
        return {"valid": False, "errors": [{"field": e.field, "reason": e.reason}]}
    return {"valid": True, "errors": []}


def kl_report_for(config: Dict[str, Any]) -> Dict[str, Any]:
    try:
        return ExperimentRunner(parse_config(config), settings).report_kl()
    except LatentImhError as e:
        logger.error(f"❌ report_kl failed: {e}")
        raise RuntimeError(str(e)) from e


def run_config(config: Dict[str, Any]) -> Dict[str, Any]:
    try:
        return ExperimentRunner(parse_config(config), settings).run()
    except LatentImhError as e:
        logger.error(f"❌ run_experiment failed: {e}")
        raise RuntimeError(str(e)) from e


def diagonal_kl_values(s: List[float], alpha: List[float], d_y: int, sigma: float) -> Dict[str, float]:
    try:
        spec = DiagonalSpec(d=len(s), d_y=d_y, s=np.asarray(s, dtype=float), alpha=np.asarray(alpha, dtype=float), sigma=sigma)
        report = expected_kl_diagonal(spec)
    except (LatentImhError, ValueError) as e:
        raise RuntimeError(str(e)) from e
    return {"D_a": report.D_a, "D_l": report.D_l}


@mcp.tool()
def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Check an experiment config against the schema without running anything.

    Args:
        config: Experiment config object (same shape as the JSON config file).

    Returns:
        {"valid": bool, "errors": [{"field", "reason"}]}.
    """
    logger.info(">>> Tool: 'validate_config' called")
    result = check_config(config)
    logger.info(f"<<< valid={result['valid']}")
    return result


@mcp.tool()
async def report_kl(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Expected KL divergences of the Approx and Latent posteriors for a Gaussian-prior problem.

    Args:
        config: Experiment config object; only the problem and seed are used.

    Returns:
        D_a, D_l, their ratio to the prior-to-posterior KL, and bounds where they apply.
    """
    logger.info("📊 Tool: 'report_kl' called")
    return await asyncio.to_thread(kl_report_for, config)


@mcp.tool()
async def run_experiment(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Run the samplers of a config and write metric series to its output directory.

    Args:
        config: Experiment config object.

    Returns:
        The manifest written next to the CSV files.
    """
    logger.info("🚀 Tool: 'run_experiment' called")
    manifest = await asyncio.to_thread(run_config, config)
    logger.info(f"✅ Experiment {manifest['config_hash'][:12]} finished")
    return manifest


@mcp.tool()
def diagonal_kl(s: List[float], alpha: List[float], d_y: int, sigma: float) -> Dict[str, float]:
    """
    Expected KL for the diagonal case F = diag(s), F_tilde = diag(alpha * s).

    Args:
        s: Singular values of F.
        alpha: Multiplicative perturbations of F_tilde.
        d_y: Number of observed leading coordinates.
        sigma: Noise standard deviation.

    Returns:
        {"D_a": float, "D_l": float}.
    """
    logger.info(f">>> Tool: 'diagonal_kl' called with d={len(s)}, d_y={d_y}, sigma={sigma}")
    return diagonal_kl_values(s, alpha, d_y, sigma)


if __name__ == "__main__":
    port = int(os.getenv("PORT", 8080))
    logger.info(f"🚀 MCP server starting on 0.0.0.0:{port}")
    logger.info(f"📡 Transport: streamable-http")

    asyncio.run(
        mcp.run_async(
            transport="streamable-http",
            host="0.0.0.0",
            port=port,
        )
    )
