import sys

from shot_noise_pytorch.cli import main

sys.exit(main())
