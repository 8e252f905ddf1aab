from pfedla.cli import main
import sys

sys.exit(main())
