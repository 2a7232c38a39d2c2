"""
Fetch the published train/test splits of the public benchmark datasets.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import backoff
import httpx

from .models import DownloadError
from .settings import get_settings

logger = logging.getLogger(__name__)

DATASETS = ("gowalla", "yelp2018", "amazon-book")
SPLITS = ("train", "test")


def dataset_urls(name: str, base_url: Optional[str] = None) -> Dict[str, str]:
    """URLs of the adjacency-format split files of one dataset"""
    if name not in DATASETS:
        raise DownloadError(f"Unknown dataset '{name}'. Available: {', '.join(DATASETS)}")
    base = (base_url or get_settings().download_base_url).rstrip("/")
    return {split: f"{base}/{name}/{split}.txt" for split in SPLITS}


@backoff.on_exception(backoff.expo, httpx.TransportError, max_tries=4)
def _fetch(client: httpx.Client, url: str) -> bytes:
    response = client.get(url)
    response.raise_for_status()
    return response.content


def download_dataset(name: str, dest: Optional[str] = None, base_url: Optional[str] = None,
                     overwrite: bool = False, client: Optional[httpx.Client] = None) -> Dict[str, Path]:
    """
    Download the train and test files of a public dataset.

    Args:
        name: One of DATASETS
        dest: Target directory (default: <data_dir>/<name>)
        base_url: Mirror root; the default points at the published splits
        overwrite: Replace existing files
        client: Optional preconfigured HTTP client

    Returns:
        Mapping split -> local path

    Raises:
        DownloadError: If a file cannot be fetched
    """
    settings = get_settings()
    target = Path(dest) if dest else Path(settings.data_dir) / name
    target.mkdir(parents=True, exist_ok=True)
    urls = dataset_urls(name, base_url)

    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=httpx.Timeout(settings.http_timeout), follow_redirects=True)
    paths = {}
    try:
        for split, url in urls.items():
            path = target / f"{split}.txt"
            if path.exists() and not overwrite:
                logger.info(f"Keeping existing {path}")
                paths[split] = path
                continue
            logger.info(f"Downloading {url}")
            try:
                content = _fetch(client, url)
            except httpx.HTTPError as e:
                raise DownloadError(f"Failed to download {url}: {e}")
            path.write_bytes(content)
            logger.info(f"Wrote {path} ({len(content)} bytes)")
            paths[split] = path
    finally:
        if own_client:
            client.close()
    return paths
