import os
import pytest
import shutil

ENV_PATH = ".env"
ENV_BACKUP = ".env.test_bak"
TEST_ENV = "BEATS_LANG=en\nBEATS_THREADS=2\n"


def pytest_sessionstart(session):
    """Parks any local .env and pins English messages and two sweep threads."""
    if os.path.exists(ENV_PATH):
        shutil.move(ENV_PATH, ENV_BACKUP)
    with open(ENV_PATH, "w") as f:
        f.write(TEST_ENV)


def pytest_sessionfinish(session, exitstatus):
    if os.path.exists(ENV_PATH):
        os.remove(ENV_PATH)
    if os.path.exists(ENV_BACKUP):
        shutil.move(ENV_BACKUP, ENV_PATH)


@pytest.fixture
def smoke_config(tmp_path):
    """A tiny run config whose corpus and outputs live under tmp_path."""
    config_path = tmp_path / "smoke.conf"
    config_path.write_text(
        "\n".join(
            [
                f"run.dataset_dir = {tmp_path / 'corpus'}",
                f"run.output_dir = {tmp_path / 'runs'}",
                "run.seed = 7",
                "generator.counts = 4, 4, 4",
                "generator.duration_mean = 0.25",
                "generator.sample_rate = 8000",
                "generator.snr_db = none",
                "augment.copies = 1",
                "audio.width = 8",
                "audio.blocks = 1",
                "audio.heads = 2",
                "audio.ff_width = 8",
                "audio.conv_kernels = 10, 8",
                "audio.conv_strides = 5, 4",
                "audio.frame_pool = 4",
                "text.width = 8",
                "text.blocks = 1",
                "text.heads = 2",
                "text.ff_width = 8",
                "fusion.heads = 2",
                "fusion.ff_width = 8",
                "fusion.references = 2",
                "model.head_width = 8",
                "optim.batch_size = 4",
                "optim.epochs = 1",
                "ablation.grid = 0.15",
            ]
        )
        + "\n"
    )
    return config_path
