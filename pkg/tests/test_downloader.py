import httpx
import pytest

from src.downloader import dataset_urls, download_dataset
from src.models import DownloadError


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_urls():
    urls = dataset_urls("gowalla", "https://mirror.example/data/")
    assert urls == {"train": "https://mirror.example/data/gowalla/train.txt",
                    "test": "https://mirror.example/data/gowalla/test.txt"}
    with pytest.raises(DownloadError):
        dataset_urls("movielens")


def test_download_writes_splits(tmp_path):
    seen = []

    def handler(request):
        seen.append(request.url.path)
        return httpx.Response(200, content=b"0 1 2\n")

    with _client(handler) as client:
        paths = download_dataset("yelp2018", str(tmp_path), "https://mirror.example", client=client)
    assert seen == ["/yelp2018/train.txt", "/yelp2018/test.txt"]
    assert paths["train"].read_text() == "0 1 2\n"


def test_existing_files_kept(tmp_path):
    (tmp_path / "train.txt").write_text("kept\n")

    def handler(request):
        return httpx.Response(200, content=b"new\n")

    with _client(handler) as client:
        download_dataset("gowalla", str(tmp_path), "https://mirror.example", client=client)
        assert (tmp_path / "train.txt").read_text() == "kept\n"
        download_dataset("gowalla", str(tmp_path), "https://mirror.example", overwrite=True, client=client)
    assert (tmp_path / "train.txt").read_text() == "new\n"


def test_http_error(tmp_path):
    with _client(lambda request: httpx.Response(404)) as client:
        with pytest.raises(DownloadError):
            download_dataset("amazon-book", str(tmp_path), "https://mirror.example", client=client)
