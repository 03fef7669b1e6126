//! Metrics ingestion socket: newline-delimited batch messages, any number of
//! producers.

use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tracing::{debug, warn};

/// Longest accepted message. A 10 000-node batch is about 1.2 MB.
pub const MAX_LINE_BYTES: u64 = 16 << 20;

pub async fn serve(listener: TcpListener, lines: mpsc::Sender<Vec<u8>>, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    debug!("producer connected from {peer}");
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(connection(stream, lines.clone(), shutdown.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
            _ = shutdown.changed() => break,
        }
    }
}

/// Forwards every line of `reader` until EOF, an oversized line or shutdown.
/// Waits on a full queue rather than dropping batches.
pub async fn connection<R: AsyncRead + Unpin>(
    reader: R,
    lines: mpsc::Sender<Vec<u8>>,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut reader = BufReader::new(reader);
    loop {
        let mut buf = Vec::new();
        let mut limited = (&mut reader).take(MAX_LINE_BYTES);
        let read = tokio::select! {
            r = limited.read_until(b'\n', &mut buf) => r,
            _ = shutdown.changed() => return,
        };
        match read {
            Ok(0) => return,
            Ok(n) => {
                if buf.last() != Some(&b'\n') && n as u64 >= MAX_LINE_BYTES {
                    warn!("message longer than {MAX_LINE_BYTES} bytes; closing producer connection");
                    return;
                }
                if lines.send(buf).await.is_err() {
                    return;
                }
            }
            Err(e) => {
                warn!("producer connection error: {e}");
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn forwards_lines_in_order() {
        let (tx, mut rx) = mpsc::channel(8);
        let (_stop, stop_rx) = watch::channel(false);
        let data: &[u8] = b"one\ntwo\nthree";
        connection(data, tx, stop_rx).await;
        let mut got = Vec::new();
        while let Some(l) = rx.recv().await {
            got.push(String::from_utf8(l).unwrap());
        }
        assert_eq!(got, vec!["one\n", "two\n", "three"]);
    }
}
