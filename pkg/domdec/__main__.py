from domdec.main import main

raise SystemExit(main())
