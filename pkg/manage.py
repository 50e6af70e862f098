#!/usr/bin/env python
import os


if __name__ == "__main__":
    # NB: an explicit --settings option or MEMVO_SETTINGS_MODULE wins over this default
    os.environ.setdefault('MEMVO_SETTINGS_MODULE', 'memvo_repo.settings.toy')

    from utils.vo_cli import vo_cli_app

    vo_cli_app()
