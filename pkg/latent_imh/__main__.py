import sys

from latent_imh.cli import main

sys.exit(main())
